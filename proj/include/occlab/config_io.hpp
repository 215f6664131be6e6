#pragma once

// Flat dotted-key configuration text:
//
//   # comment
//   train.eta = 10
//   model.backend = mlp
//   regime.kind = occ
//
// Unknown keys, duplicate keys and malformed values are errors reported with
// the source name and line. Keys not given keep the backend's defaults
// (default_config(model.backend)).

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "occlab/trainer.hpp"

namespace occlab {

/// Shortest decimal text that parses back to exactly `v`.
std::string format_number(double v);

/// Every accepted key, in serialization order.
const std::vector<std::string>& config_keys();

TrainConfig parse_config(std::string_view text, std::string_view source = "<config>");

/// Reads and parses a file; ConfigError names the path when it cannot be read.
TrainConfig load_config(const std::filesystem::path& path);

/// All keys, one per line; parse_config of the result reproduces `config`.
std::string serialize_config(const TrainConfig& config);

/// Applies `key=value` overrides (the --set form) in order, then validates
/// once, so coupled keys can change together. `config` is untouched on error.
void apply_overrides(TrainConfig& config, std::span<const std::string> assignments);
void apply_override(TrainConfig& config, std::string_view assignment);

/// detach | ce:<lambda> | policy:<lambda> | occ | occ-noclip | occ-clip.
/// OCC specs start from `occ` and only set the clip mode.
RegimeConfig parse_regime_spec(std::string_view spec, const OccConfig& occ = {});

/// Comma-separated regime specs.
std::vector<RegimeConfig> parse_regime_list(std::string_view list, const OccConfig& occ = {});

/// Comma-separated seeds, each either N or an inclusive range A-B.
std::vector<std::uint64_t> parse_seed_list(std::string_view list);

}  // namespace occlab
