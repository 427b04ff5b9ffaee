#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "vprb/core.hpp"

namespace vprb {

enum class PoolingKind { kMac, kSpoc, kGem, kNetVlad };

std::string_view to_string(PoolingKind kind);
/// Accepts "mac", "spoc", "gem", "netvlad" (case-insensitive).
PoolingKind parse_pooling_kind(std::string_view name);

inline constexpr double kGemMinP = 1.0;
inline constexpr double kGemMaxP = 1000.0;

/// Generalized-mean exponents. One entry per channel, or a single entry
/// shared by every channel.
struct GemParams {
  Vector p;

  bool shared() const { return p.size() == 1; }
  double exponent(std::size_t channel) const { return shared() ? p[0] : p[channel]; }

  static GemParams per_channel(std::size_t depth, double p0) { return {Vector(depth, p0)}; }
  static GemParams shared_exponent(double p0) { return {Vector{p0}}; }

  /// Projects every exponent onto [kGemMinP, kGemMaxP].
  void clamp();
};

/// Soft-assignment VLAD parameters for K clusters over D-dimensional local
/// descriptors. weights and centroids are K x D, row k is cluster k.
struct NetVladParams {
  std::size_t clusters = 0;
  std::size_t depth = 0;
  Vector weights;
  Vector biases;
  Vector centroids;

  NetVladParams() = default;
  NetVladParams(std::size_t k, std::size_t d)
      : clusters(k), depth(d), weights(k * d, 0.0), biases(k, 0.0),
        centroids(k * d, 0.0) {}

  std::size_t descriptor_length() const { return clusters * depth; }
  void validate() const;
};

struct NetVladOptions {
  bool intra_normalize = true;
};

Vector mac_pool(const FeatureMap& map);
Vector spoc_pool(const FeatureMap& map);
Vector gem_pool(const FeatureMap& map, const GemParams& params);

/// Subgradient of max pooling: routes each channel's gradient to the first
/// location holding the maximum.
FeatureMap mac_backward(const FeatureMap& map, std::span<const double> grad_out);
FeatureMap spoc_backward(const FeatureMap& map, std::span<const double> grad_out);

struct GemGradients {
  FeatureMap grad_map;
  Vector grad_p;
  // Set when a zero activation or an all-zero channel forced a limit value.
  bool degenerate = false;
};

GemGradients gem_backward(const FeatureMap& map, const GemParams& params,
                          std::span<const double> grad_out);

/// Intermediate state of the NetVLAD forward pass, kept for backward and tests.
struct NetVladTrace {
  std::vector<double> assignments;  // N x K softmax, row i = location i
  std::vector<double> residuals;    // K x D aggregated residual V, row k = cluster k
  std::vector<Normalized> intra;    // per-cluster normalization (empty if disabled)
  Normalized output;                // final L2 normalization of the flattened vector
};

NetVladTrace netvlad_trace(const FeatureMap& map, const NetVladParams& params,
                           const NetVladOptions& options = {});

/// Length K*D descriptor, flattened cluster by cluster and L2-normalized.
Vector netvlad_forward(const FeatureMap& map, const NetVladParams& params,
                       const NetVladOptions& options = {});

struct NetVladGradients {
  FeatureMap grad_map;
  Vector grad_weights;
  Vector grad_biases;
  Vector grad_centroids;
};

NetVladGradients netvlad_backward(const FeatureMap& map, const NetVladParams& params,
                                  std::span<const double> grad_out,
                                  const NetVladOptions& options = {});

inline constexpr double kNetVladAlpha = 100.0;
inline constexpr int kKMeansMaxIterations = 100;

/// k-means (k-means++ seeding, at most kKMeansMaxIterations Lloyd steps)
/// over the sample; returns K x D centroids.
Vector kmeans(const std::vector<Vector>& sample, std::size_t k, std::uint64_t seed);

/// Centroids from k-means, then w_k = 2*alpha*c_k and b_k = -alpha*||c_k||^2.
NetVladParams netvlad_init(const std::vector<Vector>& descriptor_sample, std::size_t k,
                           std::uint64_t seed, double alpha = kNetVladAlpha);

}  // namespace vprb
