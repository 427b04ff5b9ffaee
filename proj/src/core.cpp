#include "vprb/core.hpp"

#include <cmath>

#include <fmt/format.h>

namespace vprb {

FeatureMap::FeatureMap(std::size_t height, std::size_t width, std::size_t depth)
    : height_(height), width_(width), depth_(depth),
      values_(height * width * depth, 0.0) {}

FeatureMap::FeatureMap(std::size_t height, std::size_t width, std::size_t depth,
                       std::vector<double> values)
    : height_(height), width_(width), depth_(depth), values_(std::move(values)) {
  if (values_.size() != height * width * depth) {
    throw DimensionError(fmt::format(
        "feature map {}x{}x{} needs {} values, got {}", height, width, depth,
        height * width * depth, values_.size()));
  }
}

void validate(const FeatureMap& map) {
  if (map.height() == 0 || map.width() == 0 || map.depth() == 0) {
    throw InvalidInput(fmt::format("feature map extents must be >= 1, got {}x{}x{}",
                                   map.height(), map.width(), map.depth()));
  }
  if (!all_finite(map.values())) {
    throw InvalidInput("feature map contains non-finite values");
  }
}

bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError(fmt::format("dot: length {} vs {}", a.size(), b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

Normalized l2_normalize(std::span<const double> v) {
  if (!all_finite(v)) throw InvalidInput("l2_normalize: non-finite input");
  Normalized out;
  out.values.assign(v.begin(), v.end());
  out.norm = l2_norm(v);
  if (out.norm <= kNormEpsilon) {
    out.degenerate = true;
    return out;
  }
  for (double& x : out.values) x /= out.norm;
  return out;
}

Vector l2_normalize_backward(const Normalized& forward,
                             std::span<const double> grad_out) {
  if (grad_out.size() != forward.values.size()) {
    throw DimensionError("l2_normalize_backward: gradient length mismatch");
  }
  Vector grad(grad_out.begin(), grad_out.end());
  if (forward.degenerate) return grad;
  const double proj = dot(forward.values, grad_out);
  for (std::size_t i = 0; i < grad.size(); ++i) {
    grad[i] = (grad_out[i] - forward.values[i] * proj) / forward.norm;
  }
  return grad;
}

double squared_l2_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError(
        fmt::format("l2_distance: length {} vs {}", a.size(), b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

double l2_distance(std::span<const double> a, std::span<const double> b) {
  return std::sqrt(squared_l2_distance(a, b));
}

double geo_distance(const Pose& p, const Pose& q) {
  const double dx = p.x - q.x;
  const double dy = p.y - q.y;
  const double dz = p.z - q.z;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

}  // namespace vprb
