#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "vprb/core.hpp"

namespace vprb {

enum class LossKind { kContrastive, kTriplet, kArcFace };

std::string_view to_string(LossKind kind);
LossKind parse_loss_kind(std::string_view name);

enum class PairDistance { kSquaredEuclidean, kEuclidean };

struct ContrastiveConfig {
  double margin = 0.7;
  PairDistance distance = PairDistance::kSquaredEuclidean;
};

struct TripletConfig {
  double margin = 0.1;
};

inline constexpr double kArcCosClamp = 1e-7;

struct ArcFaceConfig {
  double scale = 30.0;
  double margin = 0.2;  // radians
};

/// Classifier weights for the angular-margin loss: `dim` x `classes`,
/// stored column by column (column j at [j*dim, (j+1)*dim)).
struct ArcFaceWeights {
  std::size_t dim = 0;
  std::size_t classes = 0;
  Vector values;

  ArcFaceWeights() = default;
  ArcFaceWeights(std::size_t d, std::size_t n) : dim(d), classes(n), values(d * n, 0.0) {}

  std::span<const double> column(std::size_t j) const { return {values.data() + j * dim, dim}; }
  std::span<double> column(std::size_t j) { return {values.data() + j * dim, dim}; }

  /// Rescales every column to unit norm. Degenerate columns and columns
  /// already within 1e-12 of unit norm are left untouched.
  void normalize_columns();
};

struct PairLoss {
  double loss = 0.0;
  Vector grad_a;
  Vector grad_b;
};

/// y = true for a matching pair.
PairLoss contrastive_loss(std::span<const double> fa, std::span<const double> fb,
                          bool matching, const ContrastiveConfig& cfg);

struct TripletLoss {
  double loss = 0.0;
  Vector grad_query;
  Vector grad_positive;
  std::vector<Vector> grad_negatives;
  std::size_t active = 0;  // negatives with a violated margin
};

TripletLoss triplet_loss(std::span<const double> query, std::span<const double> positive,
                         const std::vector<Vector>& negatives, const TripletConfig& cfg);

struct ArcFaceLoss {
  double loss = 0.0;
  std::vector<Vector> grad_features;
  Vector grad_weights;  // same layout as ArcFaceWeights::values
};

/// Mean additive-angular-margin cross-entropy over the batch. Features and
/// weight columns are normalized internally; gradients are with respect to the
/// raw (unnormalized) inputs.
ArcFaceLoss arcface_loss(const std::vector<Vector>& features,
                         const std::vector<std::size_t>& labels, const ArcFaceWeights& weights,
                         const ArcFaceConfig& cfg);

/// Class scores s*cos(theta_j) without margin; argmax is the prediction.
Vector arcface_logits(std::span<const double> feature, const ArcFaceWeights& weights,
                      double scale);

}  // namespace vprb
