#include "vprb/pooling.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "vprb/random.hpp"

namespace vprb {

std::string_view to_string(PoolingKind kind) {
  switch (kind) {
    case PoolingKind::kMac: return "mac";
    case PoolingKind::kSpoc: return "spoc";
    case PoolingKind::kGem: return "gem";
    case PoolingKind::kNetVlad: return "netvlad";
  }
  return "unknown";
}

PoolingKind parse_pooling_kind(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "mac") return PoolingKind::kMac;
  if (lower == "spoc") return PoolingKind::kSpoc;
  if (lower == "gem") return PoolingKind::kGem;
  if (lower == "netvlad") return PoolingKind::kNetVlad;
  throw InvalidInput(fmt::format("unknown pooling kind '{}'", name));
}

void GemParams::clamp() {
  for (double& v : p) v = std::clamp(v, kGemMinP, kGemMaxP);
}

void NetVladParams::validate() const {
  if (clusters == 0 || depth == 0) throw InvalidInput("netvlad: K and D must be >= 1");
  if (weights.size() != clusters * depth || centroids.size() != clusters * depth ||
      biases.size() != clusters) {
    throw DimensionError("netvlad: parameter blocks do not match K x D");
  }
  if (!all_finite(weights) || !all_finite(biases) || !all_finite(centroids)) {
    throw InvalidInput("netvlad: non-finite parameters");
  }
}

namespace {

void check_gem_shape(const FeatureMap& map, const GemParams& params) {
  if (params.p.empty() || (!params.shared() && params.p.size() != map.depth())) {
    throw DimensionError(fmt::format("gem: {} exponents for depth {}", params.p.size(),
                                     map.depth()));
  }
}

bool is_integer(double v) { return std::floor(v) == v; }

}  // namespace

Vector mac_pool(const FeatureMap& map) {
  const std::size_t depth = map.depth();
  Vector out(depth, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < map.locations(); ++i) {
    const auto x = map.location(i);
    for (std::size_t d = 0; d < depth; ++d) out[d] = std::max(out[d], x[d]);
  }
  return out;
}

Vector spoc_pool(const FeatureMap& map) {
  const std::size_t depth = map.depth();
  Vector out(depth, 0.0);
  for (std::size_t i = 0; i < map.locations(); ++i) {
    const auto x = map.location(i);
    for (std::size_t d = 0; d < depth; ++d) out[d] += x[d];
  }
  const double n = static_cast<double>(map.locations());
  for (double& v : out) v /= n;
  return out;
}

FeatureMap mac_backward(const FeatureMap& map, std::span<const double> grad_out) {
  if (grad_out.size() != map.depth()) throw DimensionError("mac_backward: gradient length");
  FeatureMap grad(map.height(), map.width(), map.depth());
  for (std::size_t d = 0; d < map.depth(); ++d) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < map.locations(); ++i) {
      if (map.location(i)[d] > map.location(best)[d]) best = i;
    }
    grad.location(best)[d] = grad_out[d];
  }
  return grad;
}

FeatureMap spoc_backward(const FeatureMap& map, std::span<const double> grad_out) {
  if (grad_out.size() != map.depth()) throw DimensionError("spoc_backward: gradient length");
  FeatureMap grad(map.height(), map.width(), map.depth());
  const double n = static_cast<double>(map.locations());
  for (std::size_t i = 0; i < map.locations(); ++i) {
    auto g = grad.location(i);
    for (std::size_t d = 0; d < map.depth(); ++d) g[d] = grad_out[d] / n;
  }
  return grad;
}

// f = (mean x^p)^(1/p), evaluated as m * (mean (x/m)^p)^(1/p) with m = max|x|
// so that p up to kGemMaxP does not overflow.
Vector gem_pool(const FeatureMap& map, const GemParams& params) {
  check_gem_shape(map, params);
  const std::size_t depth = map.depth();
  const std::size_t n = map.locations();
  Vector out(depth, 0.0);
  for (std::size_t d = 0; d < depth; ++d) {
    const double p = params.exponent(d);
    double scale = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double x = map.location(i)[d];
      if (x < 0.0 && !is_integer(p)) {
        throw InvalidInput(fmt::format(
            "gem: negative activation {} in channel {} with non-integer p = {}", x, d, p));
      }
      scale = std::max(scale, std::abs(x));
    }
    if (p == 1.0) {
      double sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) sum += map.location(i)[d];
      out[d] = sum / static_cast<double>(n);
      continue;
    }
    if (scale == 0.0) continue;
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += std::pow(map.location(i)[d] / scale, p);
    mean /= static_cast<double>(n);
    if (mean < 0.0) {
      throw InvalidInput(fmt::format("gem: channel {} has a negative power mean", d));
    }
    out[d] = scale * std::pow(mean, 1.0 / p);
  }
  return out;
}

GemGradients gem_backward(const FeatureMap& map, const GemParams& params,
                          std::span<const double> grad_out) {
  check_gem_shape(map, params);
  if (grad_out.size() != map.depth()) throw DimensionError("gem_backward: gradient length");
  for (double x : map.values()) {
    if (x < 0.0) throw InvalidInput("gem_backward: activations must be non-negative");
  }
  const std::size_t depth = map.depth();
  const std::size_t n = map.locations();
  const double inv_n = 1.0 / static_cast<double>(n);
  const Vector f = gem_pool(map, params);

  GemGradients out{FeatureMap(map.height(), map.width(), depth),
                   Vector(params.p.size(), 0.0), false};
  for (std::size_t d = 0; d < depth; ++d) {
    const double p = params.exponent(d);
    const double g = grad_out[d];
    if (f[d] == 0.0) {
      // All-zero channel: only the p = 1 mean is differentiable here.
      out.degenerate = true;
      if (p == 1.0) {
        for (std::size_t i = 0; i < n; ++i) out.grad_map.location(i)[d] = g * inv_n;
      }
      continue;
    }
    // df/dx = (x / f)^(p-1) / N
    for (std::size_t i = 0; i < n; ++i) {
      const double x = map.location(i)[d];
      out.grad_map.location(i)[d] = g * std::pow(x / f[d], p - 1.0) * inv_n;
    }
    // df/dp = f * (U / (p T) - log T / p^2) with r = x/m, T = mean r^p,
    // U = mean r^p log r and r^p log r := 0 at r = 0.
    double scale = 0.0;
    for (std::size_t i = 0; i < n; ++i) scale = std::max(scale, map.location(i)[d]);
    double t = 0.0;
    double u = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = map.location(i)[d] / scale;
      if (r == 0.0) {
        out.degenerate = true;
        continue;
      }
      const double rp = std::pow(r, p);
      t += rp;
      u += rp * std::log(r);
    }
    t *= inv_n;
    u *= inv_n;
    const double dfdp = f[d] * (u / (p * t) - std::log(t) / (p * p));
    out.grad_p[params.shared() ? 0 : d] += g * dfdp;
  }
  return out;
}

namespace {

void check_netvlad(const FeatureMap& map, const NetVladParams& params) {
  params.validate();
  if (map.depth() != params.depth) {
    throw DimensionError(fmt::format("netvlad: map depth {} vs parameter depth {}",
                                     map.depth(), params.depth));
  }
}

}  // namespace

NetVladTrace netvlad_trace(const FeatureMap& map, const NetVladParams& params,
                           const NetVladOptions& options) {
  check_netvlad(map, params);
  const std::size_t n = map.locations();
  const std::size_t k_count = params.clusters;
  const std::size_t depth = params.depth;

  NetVladTrace trace;
  trace.assignments.assign(n * k_count, 0.0);
  trace.residuals.assign(k_count * depth, 0.0);

  Vector logits(k_count);
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = map.location(i);
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < k_count; ++k) {
      const std::span<const double> w(params.weights.data() + k * depth, depth);
      logits[k] = dot(w, x) + params.biases[k];
      top = std::max(top, logits[k]);
    }
    double z = 0.0;
    for (std::size_t k = 0; k < k_count; ++k) {
      logits[k] = std::exp(logits[k] - top);
      z += logits[k];
    }
    double* a = trace.assignments.data() + i * k_count;
    for (std::size_t k = 0; k < k_count; ++k) {
      a[k] = logits[k] / z;
      double* v = trace.residuals.data() + k * depth;
      const double* c = params.centroids.data() + k * depth;
      for (std::size_t j = 0; j < depth; ++j) v[j] += a[k] * (x[j] - c[j]);
    }
  }

  Vector flat;
  if (options.intra_normalize) {
    flat.reserve(k_count * depth);
    trace.intra.reserve(k_count);
    for (std::size_t k = 0; k < k_count; ++k) {
      trace.intra.push_back(l2_normalize(
          std::span<const double>(trace.residuals.data() + k * depth, depth)));
      const auto& col = trace.intra.back().values;
      flat.insert(flat.end(), col.begin(), col.end());
    }
  } else {
    flat = trace.residuals;
  }
  trace.output = l2_normalize(flat);
  return trace;
}

Vector netvlad_forward(const FeatureMap& map, const NetVladParams& params,
                       const NetVladOptions& options) {
  return netvlad_trace(map, params, options).output.values;
}

NetVladGradients netvlad_backward(const FeatureMap& map, const NetVladParams& params,
                                  std::span<const double> grad_out,
                                  const NetVladOptions& options) {
  const NetVladTrace trace = netvlad_trace(map, params, options);
  const std::size_t n = map.locations();
  const std::size_t k_count = params.clusters;
  const std::size_t depth = params.depth;
  if (grad_out.size() != k_count * depth) {
    throw DimensionError("netvlad_backward: gradient length");
  }

  // dL/dV, K x D
  Vector grad_v = l2_normalize_backward(trace.output, grad_out);
  if (options.intra_normalize) {
    for (std::size_t k = 0; k < k_count; ++k) {
      const Vector g = l2_normalize_backward(
          trace.intra[k], std::span<const double>(grad_v.data() + k * depth, depth));
      std::copy(g.begin(), g.end(), grad_v.begin() + static_cast<std::ptrdiff_t>(k * depth));
    }
  }

  NetVladGradients out{FeatureMap(map.height(), map.width(), depth),
                       Vector(k_count * depth, 0.0), Vector(k_count, 0.0),
                       Vector(k_count * depth, 0.0)};

  Vector grad_a(k_count);
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = map.location(i);
    auto gx = out.grad_map.location(i);
    const double* a = trace.assignments.data() + i * k_count;

    double weighted = 0.0;
    for (std::size_t k = 0; k < k_count; ++k) {
      const double* gv = grad_v.data() + k * depth;
      const double* c = params.centroids.data() + k * depth;
      double acc = 0.0;
      for (std::size_t j = 0; j < depth; ++j) {
        acc += gv[j] * (x[j] - c[j]);
        gx[j] += a[k] * gv[j];
        out.grad_centroids[k * depth + j] -= a[k] * gv[j];
      }
      grad_a[k] = acc;
      weighted += a[k] * acc;
    }
    // softmax backward, then the affine logits
    for (std::size_t k = 0; k < k_count; ++k) {
      const double gz = a[k] * (grad_a[k] - weighted);
      out.grad_biases[k] += gz;
      const double* w = params.weights.data() + k * depth;
      double* gw = out.grad_weights.data() + k * depth;
      for (std::size_t j = 0; j < depth; ++j) {
        gw[j] += gz * x[j];
        gx[j] += gz * w[j];
      }
    }
  }
  return out;
}

Vector kmeans(const std::vector<Vector>& sample, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw InvalidInput("kmeans: K must be >= 1");
  if (sample.size() < k) {
    throw InvalidInput(fmt::format("kmeans: sample of {} is smaller than K = {}",
                                   sample.size(), k));
  }
  const std::size_t depth = sample.front().size();
  for (const auto& s : sample) {
    if (s.size() != depth) throw DimensionError("kmeans: ragged sample");
  }

  Rng rng(seed);
  Vector centroids;
  centroids.reserve(k * depth);
  auto centroid = [&](std::size_t c) {
    return std::span<const double>(centroids.data() + c * depth, depth);
  };

  // k-means++ seeding
  const std::size_t first = uniform_index(rng, sample.size());
  centroids.insert(centroids.end(), sample[first].begin(), sample[first].end());
  Vector closest(sample.size(), std::numeric_limits<double>::infinity());
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < sample.size(); ++i) {
      closest[i] = std::min(closest[i], squared_l2_distance(sample[i], centroid(c - 1)));
      total += closest[i];
    }
    std::size_t pick = sample.size() - 1;
    if (total > 0.0) {
      double target = uniform01(rng) * total;
      for (std::size_t i = 0; i < sample.size(); ++i) {
        target -= closest[i];
        if (target < 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = uniform_index(rng, sample.size());
    }
    centroids.insert(centroids.end(), sample[pick].begin(), sample[pick].end());
  }

  std::vector<std::size_t> label(sample.size(), k);
  for (int iter = 0; iter < kKMeansMaxIterations; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < sample.size(); ++i) {
      std::size_t best = 0;
      double best_d = squared_l2_distance(sample[i], centroid(0));
      for (std::size_t c = 1; c < k; ++c) {
        const double d = squared_l2_distance(sample[i], centroid(c));
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (label[i] != best) {
        label[i] = best;
        changed = true;
      }
    }
    if (!changed) break;
    Vector sums(k * depth, 0.0);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < sample.size(); ++i) {
      ++counts[label[i]];
      for (std::size_t j = 0; j < depth; ++j) sums[label[i] * depth + j] += sample[i][j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;  // empty cluster keeps its previous centroid
      for (std::size_t j = 0; j < depth; ++j) {
        centroids[c * depth + j] = sums[c * depth + j] / static_cast<double>(counts[c]);
      }
    }
  }
  return centroids;
}

NetVladParams netvlad_init(const std::vector<Vector>& descriptor_sample, std::size_t k,
                           std::uint64_t seed, double alpha) {
  if (descriptor_sample.size() < k) {
    throw InvalidInput(fmt::format("netvlad_init: sample of {} is smaller than K = {}",
                                   descriptor_sample.size(), k));
  }
  const std::size_t depth = descriptor_sample.front().size();
  NetVladParams params(k, depth);
  params.centroids = kmeans(descriptor_sample, k, seed);
  for (std::size_t c = 0; c < k; ++c) {
    double sq = 0.0;
    for (std::size_t j = 0; j < depth; ++j) {
      const double v = params.centroids[c * depth + j];
      params.weights[c * depth + j] = 2.0 * alpha * v;
      sq += v * v;
    }
    params.biases[c] = -alpha * sq;
  }
  return params;
}

}  // namespace vprb
