#include "vprb/losses.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

#include <fmt/format.h>

namespace vprb {

std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::kContrastive: return "contrastive";
    case LossKind::kTriplet: return "triplet";
    case LossKind::kArcFace: return "arcface";
  }
  return "unknown";
}

LossKind parse_loss_kind(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "contrastive") return LossKind::kContrastive;
  if (lower == "triplet") return LossKind::kTriplet;
  if (lower == "arcface") return LossKind::kArcFace;
  throw InvalidInput(fmt::format("unknown loss kind '{}'", name));
}

void ArcFaceWeights::normalize_columns() {
  for (std::size_t j = 0; j < classes; ++j) {
    auto col = column(j);
    const double norm = l2_norm(col);
    // Already-unit columns are left bit-identical.
    if (norm <= kNormEpsilon || std::abs(norm - 1.0) <= 1e-12) continue;
    for (double& v : col) v /= norm;
  }
}

PairLoss contrastive_loss(std::span<const double> fa, std::span<const double> fb,
                          bool matching, const ContrastiveConfig& cfg) {
  if (fa.size() != fb.size()) {
    throw DimensionError(fmt::format("contrastive: length {} vs {}", fa.size(), fb.size()));
  }
  if (!(cfg.margin > 0.0)) throw InvalidInput("contrastive: margin must be > 0");

  PairLoss out{0.0, Vector(fa.size(), 0.0), Vector(fb.size(), 0.0)};
  const double sq = squared_l2_distance(fa, fb);
  double dist = sq;
  // dl/dfa = scale * (fa - fb)
  double scale = 2.0;
  if (cfg.distance == PairDistance::kEuclidean) {
    dist = std::sqrt(sq);
    scale = dist > 0.0 ? 1.0 / dist : 0.0;
  }

  double sign = 0.0;
  if (matching) {
    out.loss = dist;
    sign = 1.0;
  } else if (cfg.margin - dist > 0.0) {
    out.loss = cfg.margin - dist;
    sign = -1.0;
  }
  if (sign != 0.0) {
    for (std::size_t i = 0; i < fa.size(); ++i) {
      const double g = sign * scale * (fa[i] - fb[i]);
      out.grad_a[i] = g;
      out.grad_b[i] = -g;
    }
  }
  return out;
}

TripletLoss triplet_loss(std::span<const double> query, std::span<const double> positive,
                         const std::vector<Vector>& negatives, const TripletConfig& cfg) {
  if (negatives.empty()) throw InvalidInput("triplet: at least one negative is required");
  if (!(cfg.margin > 0.0)) throw InvalidInput("triplet: margin must be > 0");
  const std::size_t dim = query.size();
  const double d_pos = squared_l2_distance(query, positive);

  TripletLoss out;
  out.grad_query.assign(dim, 0.0);
  out.grad_positive.assign(dim, 0.0);
  out.grad_negatives.assign(negatives.size(), Vector(dim, 0.0));
  for (std::size_t j = 0; j < negatives.size(); ++j) {
    const auto& neg = negatives[j];
    const double violation = d_pos - squared_l2_distance(query, neg) + cfg.margin;
    if (violation <= 0.0) continue;
    out.loss += violation;
    ++out.active;
    for (std::size_t i = 0; i < dim; ++i) {
      out.grad_query[i] += 2.0 * (neg[i] - positive[i]);
      out.grad_positive[i] -= 2.0 * (query[i] - positive[i]);
      out.grad_negatives[j][i] = 2.0 * (query[i] - neg[i]);
    }
  }
  return out;
}

namespace {

struct ClampedCos {
  double value;
  bool clamped;
};

ClampedCos clamp_cos(double c) {
  const double lo = -1.0 + kArcCosClamp;
  const double hi = 1.0 - kArcCosClamp;
  if (c < lo) return {lo, true};
  if (c > hi) return {hi, true};
  return {c, false};
}

}  // namespace

Vector arcface_logits(std::span<const double> feature, const ArcFaceWeights& weights,
                      double scale) {
  const Normalized x = l2_normalize(feature);
  Vector logits(weights.classes);
  for (std::size_t j = 0; j < weights.classes; ++j) {
    const Normalized w = l2_normalize(weights.column(j));
    logits[j] = scale * clamp_cos(dot(x.values, w.values)).value;
  }
  return logits;
}

ArcFaceLoss arcface_loss(const std::vector<Vector>& features,
                         const std::vector<std::size_t>& labels, const ArcFaceWeights& weights,
                         const ArcFaceConfig& cfg) {
  if (features.empty()) throw InvalidInput("arcface: empty batch");
  if (features.size() != labels.size()) {
    throw DimensionError("arcface: features and labels differ in count");
  }
  if (weights.classes < 2) throw InvalidInput("arcface: at least 2 classes are required");
  if (!(cfg.scale > 0.0)) throw InvalidInput("arcface: scale must be > 0");
  const std::size_t dim = weights.dim;
  const std::size_t n_classes = weights.classes;
  const double inv_batch = 1.0 / static_cast<double>(features.size());

  std::vector<Normalized> w_hat;
  w_hat.reserve(n_classes);
  for (std::size_t j = 0; j < n_classes; ++j) w_hat.push_back(l2_normalize(weights.column(j)));
  Vector grad_w_hat(dim * n_classes, 0.0);

  ArcFaceLoss out;
  out.grad_features.reserve(features.size());
  Vector logits(n_classes);
  Vector dcos(n_classes);
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i].size() != dim) {
      throw DimensionError(fmt::format("arcface: feature length {} vs weight dim {}",
                                       features[i].size(), dim));
    }
    const std::size_t y = labels[i];
    if (y >= n_classes) {
      throw InvalidInput(fmt::format("arcface: label {} out of range [0, {})", y, n_classes));
    }
    const Normalized x = l2_normalize(features[i]);

    // d logit_j / d cos_j, zero where the clamp is active
    for (std::size_t j = 0; j < n_classes; ++j) {
      const ClampedCos c = clamp_cos(dot(x.values, w_hat[j].values));
      if (j == y) {
        const double theta = std::acos(c.value);
        logits[j] = cfg.scale * std::cos(theta + cfg.margin);
        dcos[j] = c.clamped ? 0.0
                            : cfg.scale * std::sin(theta + cfg.margin) /
                                  std::sqrt(1.0 - c.value * c.value);
      } else {
        logits[j] = cfg.scale * c.value;
        dcos[j] = c.clamped ? 0.0 : cfg.scale;
      }
    }

    const double top = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - top);
    const double log_z = top + std::log(z);
    out.loss += (log_z - logits[y]) * inv_batch;

    Vector grad_x_hat(dim, 0.0);
    for (std::size_t j = 0; j < n_classes; ++j) {
      const double prob = std::exp(logits[j] - log_z);
      const double g = (prob - (j == y ? 1.0 : 0.0)) * dcos[j] * inv_batch;
      if (g == 0.0) continue;
      const auto& wj = w_hat[j].values;
      for (std::size_t k = 0; k < dim; ++k) {
        grad_x_hat[k] += g * wj[k];
        grad_w_hat[j * dim + k] += g * x.values[k];
      }
    }
    out.grad_features.push_back(l2_normalize_backward(x, grad_x_hat));
  }

  out.grad_weights.assign(dim * n_classes, 0.0);
  for (std::size_t j = 0; j < n_classes; ++j) {
    const Vector g = l2_normalize_backward(
        w_hat[j], std::span<const double>(grad_w_hat.data() + j * dim, dim));
    std::copy(g.begin(), g.end(), out.grad_weights.begin() + static_cast<std::ptrdiff_t>(j * dim));
  }
  return out;
}

}  // namespace vprb
