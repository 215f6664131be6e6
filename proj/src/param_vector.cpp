#include "occlab/param_vector.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "occlab/errors.hpp"

namespace occlab {

std::string_view to_string(SegmentName name) {
  switch (name) {
    case SegmentName::Trunk: return "trunk";
    case SegmentName::MainHead: return "main_head";
    case SegmentName::MtpHead: return "mtp_head";
  }
  return "?";
}

ParamLayout::ParamLayout(std::size_t trunk, std::size_t main_head, std::size_t mtp_head) {
  segments_[0] = {0, trunk};
  segments_[1] = {trunk, trunk + main_head};
  segments_[2] = {trunk + main_head, trunk + main_head + mtp_head};
}

ParamVector::ParamVector(ParamLayout layout)
    : layout_(layout), values_(layout.total(), 0.0) {}

ParamVector::ParamVector(ParamLayout layout, std::vector<double> values)
    : layout_(layout), values_(std::move(values)) {
  if (values_.size() != layout_.total()) {
    throw InputError("parameter vector has " + std::to_string(values_.size()) +
                     " entries but its layout covers " + std::to_string(layout_.total()));
  }
}

std::span<const double> ParamVector::segment_values(SegmentName name) const {
  const Segment& s = layout_.segment(name);
  return std::span<const double>(values_).subspan(s.begin, s.size());
}

std::span<double> ParamVector::segment_values(SegmentName name) {
  const Segment& s = layout_.segment(name);
  return std::span<double>(values_).subspan(s.begin, s.size());
}

ParamVector ParamVector::masked_to(SegmentName keep) const {
  ParamVector out(layout_);
  const Segment& s = layout_.segment(keep);
  std::copy(values_.begin() + static_cast<std::ptrdiff_t>(s.begin),
            values_.begin() + static_cast<std::ptrdiff_t>(s.end),
            out.values_.begin() + static_cast<std::ptrdiff_t>(s.begin));
  return out;
}

ParamVector ParamVector::main_model_part() const {
  ParamVector out = *this;
  for (double& v : out.segment_values(SegmentName::MtpHead)) v = 0.0;
  return out;
}

bool ParamVector::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

double main_model_dot(const ParamVector& a, const ParamVector& b) {
  if (!(a.layout() == b.layout())) throw InputError("main_model_dot: layout mismatch");
  const std::size_t end = a.layout().segment(SegmentName::MainHead).end;
  double s = 0.0;
  for (std::size_t i = 0; i < end; ++i) s += a[i] * b[i];
  return s;
}

}  // namespace occlab
