#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vprb {

// Error hierarchy. The CLI maps these onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class ParseError : public DataError {
 public:
  using DataError::DataError;
};

class MiningError : public DataError {
 public:
  using DataError::DataError;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class TrainingDivergence : public Error {
 public:
  using Error::Error;
};

using Vector = std::vector<double>;

/// Dense H x W x D activation block, row-major by (h, w, d). The D values at
/// one spatial location are contiguous, so location(i) is a local descriptor.
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(std::size_t height, std::size_t width, std::size_t depth);
  FeatureMap(std::size_t height, std::size_t width, std::size_t depth,
             std::vector<double> values);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t depth() const { return depth_; }
  std::size_t locations() const { return height_ * width_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  std::size_t index(std::size_t h, std::size_t w, std::size_t d) const {
    return (h * width_ + w) * depth_ + d;
  }
  double& at(std::size_t h, std::size_t w, std::size_t d) {
    return values_[index(h, w, d)];
  }
  double at(std::size_t h, std::size_t w, std::size_t d) const {
    return values_[index(h, w, d)];
  }

  std::span<const double> location(std::size_t i) const {
    return {values_.data() + i * depth_, depth_};
  }
  std::span<double> location(std::size_t i) {
    return {values_.data() + i * depth_, depth_};
  }

  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }

  bool same_shape(const FeatureMap& other) const {
    return height_ == other.height_ && width_ == other.width_ &&
           depth_ == other.depth_;
  }

  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t depth_ = 0;
  std::vector<double> values_;
};

/// Throws InvalidInput unless every value is finite and all extents >= 1.
void validate(const FeatureMap& map);

struct Pose {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double timestamp = 0.0;
};

struct Normalized {
  Vector values;
  double norm = 0.0;
  bool degenerate = false;
};

inline constexpr double kNormEpsilon = 1e-12;

/// v / ||v||. Vectors with norm <= kNormEpsilon come back unchanged and flagged.
Normalized l2_normalize(std::span<const double> v);

/// Backward of l2_normalize: given y = v/||v|| and dL/dy, returns dL/dv.
/// A degenerate forward passes the gradient through unchanged.
Vector l2_normalize_backward(const Normalized& forward,
                             std::span<const double> grad_out);

double l2_norm(std::span<const double> v);
double squared_l2_distance(std::span<const double> a, std::span<const double> b);
double l2_distance(std::span<const double> a, std::span<const double> b);
double dot(std::span<const double> a, std::span<const double> b);

/// Euclidean distance over (x, y, z); timestamps are ignored.
double geo_distance(const Pose& p, const Pose& q);

bool all_finite(std::span<const double> v);

}  // namespace vprb
