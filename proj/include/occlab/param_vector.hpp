#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace occlab {

enum class SegmentName { Trunk = 0, MainHead = 1, MtpHead = 2 };

inline constexpr std::array<SegmentName, 3> kAllSegments = {
    SegmentName::Trunk, SegmentName::MainHead, SegmentName::MtpHead};

std::string_view to_string(SegmentName name);

/// Half-open index range [begin, end) into a flat parameter vector.
struct Segment {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool contains(std::size_t i) const { return i >= begin && i < end; }
  bool operator==(const Segment&) const = default;
};

/// Contiguous trunk | main_head | mtp_head partition of the parameter index
/// space. Any segment may be empty; together they always tile [0, total).
class ParamLayout {
 public:
  ParamLayout() = default;
  ParamLayout(std::size_t trunk, std::size_t main_head, std::size_t mtp_head);

  const Segment& segment(SegmentName name) const {
    return segments_[static_cast<std::size_t>(name)];
  }
  std::size_t total() const { return segments_[2].end; }

  /// True when `i` belongs to the trunk or the main head, i.e. to the
  /// parameters the main policy actually depends on.
  bool in_main_model(std::size_t i) const { return i < segments_[1].end; }

  bool operator==(const ParamLayout&) const = default;

 private:
  std::array<Segment, 3> segments_{};
};

/// Flat real parameter vector (or anything shaped like one, e.g. a gradient)
/// with named contiguous segments. Value type; copies are deep.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(ParamLayout layout);  // zero-filled
  ParamVector(ParamLayout layout, std::vector<double> values);

  static ParamVector zeros_like(const ParamVector& other) { return ParamVector(other.layout_); }

  const ParamLayout& layout() const { return layout_; }
  std::size_t size() const { return values_.size(); }

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  const std::vector<double>& raw() const { return values_; }

  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  std::span<const double> segment_values(SegmentName name) const;
  std::span<double> segment_values(SegmentName name);

  /// Copy with every entry outside `keep` set to zero.
  ParamVector masked_to(SegmentName keep) const;
  /// Copy restricted to the main model (trunk + main_head); mtp_head zeroed.
  ParamVector main_model_part() const;

  bool all_finite() const;

  bool operator==(const ParamVector&) const = default;

 private:
  ParamLayout layout_;
  std::vector<double> values_;
};

/// <a, b> over the main-model segments only (trunk + main_head).
double main_model_dot(const ParamVector& a, const ParamVector& b);

}  // namespace occlab
