#pragma once

// Independent reference implementations used as test oracles. They are
// written as plainly as possible and share no code with the library beyond
// its data types.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "vprb/core.hpp"
#include "vprb/pooling.hpp"

namespace oracle {

using vprb::FeatureMap;
using vprb::Vector;

inline std::mt19937_64& test_rng() {
  static std::mt19937_64 rng(20240611);
  return rng;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Vector random_vector(std::mt19937_64& rng, std::size_t n, double lo, double hi) {
  Vector v(n);
  for (double& x : v) x = uniform(rng, lo, hi);
  return v;
}

inline FeatureMap random_map(std::mt19937_64& rng, std::size_t h, std::size_t w, std::size_t d,
                             double lo, double hi) {
  return FeatureMap(h, w, d, random_vector(rng, h * w * d, lo, hi));
}

// Central difference of f at x along every coordinate.
inline Vector numeric_gradient(const std::function<double(const Vector&)>& f, Vector x,
                               double step = 1e-6) {
  Vector g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + step;
    const double up = f(x);
    x[i] = saved - step;
    const double down = f(x);
    x[i] = saved;
    g[i] = (up - down) / (2 * step);
  }
  return g;
}

inline double max_rel_error(const Vector& a, const Vector& b) {
  double diff = 0, scale = 1e-12;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
  }
  return diff / scale;
}

inline double max_abs_diff(const Vector& a, const Vector& b) {
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

inline Vector normalized(const Vector& v) {
  double s = 0;
  for (double x : v) s += x * x;
  s = std::sqrt(s);
  Vector out(v);
  if (s > 1e-12) {
    for (double& x : out) x /= s;
  }
  return out;
}

// Zero-padded 3x3 convolution written as a direct sum; weight is
// out x in x 3 x 3.
inline FeatureMap naive_conv3x3(const FeatureMap& in, const Vector& weight, const Vector& bias,
                                std::size_t out_channels) {
  const int H = static_cast<int>(in.height()), W = static_cast<int>(in.width());
  const std::size_t C = in.depth();
  FeatureMap out(in.height(), in.width(), out_channels);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      for (std::size_t o = 0; o < out_channels; ++o) {
        double acc = bias[o];
        for (std::size_t c = 0; c < C; ++c) {
          for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
              const int yy = y + dy, xx = x + dx;
              if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
              const double wgt = weight[((o * C + c) * 3 + (dy + 1)) * 3 + (dx + 1)];
              acc += wgt * in.at(yy, xx, c);
            }
          }
        }
        out.at(y, x, o) = acc;
      }
    }
  }
  return out;
}

// NetVLAD by direct evaluation: softmax assignment, residual sums against
// each cluster's own centroid, optional per-cluster L2, global L2.
inline Vector scalar_netvlad(const FeatureMap& map, const vprb::NetVladParams& p, bool intra) {
  const std::size_t K = p.clusters, D = p.depth, N = map.locations();
  std::vector<std::vector<double>> V(K, std::vector<double>(D, 0.0));
  for (std::size_t i = 0; i < N; ++i) {
    std::vector<double> logit(K);
    for (std::size_t k = 0; k < K; ++k) {
      logit[k] = p.biases[k];
      for (std::size_t j = 0; j < D; ++j) logit[k] += p.weights[k * D + j] * map.location(i)[j];
    }
    const double top = *std::max_element(logit.begin(), logit.end());
    double z = 0;
    for (double l : logit) z += std::exp(l - top);
    for (std::size_t k = 0; k < K; ++k) {
      const double a = std::exp(logit[k] - top) / z;
      for (std::size_t j = 0; j < D; ++j) {
        V[k][j] += a * (map.location(i)[j] - p.centroids[k * D + j]);
      }
    }
  }
  Vector flat;
  for (std::size_t k = 0; k < K; ++k) {
    const Vector col = intra ? normalized(V[k]) : V[k];
    flat.insert(flat.end(), col.begin(), col.end());
  }
  return normalized(flat);
}

// Full ranking by sorting every distance; ties keep row order.
inline std::vector<std::size_t> full_sort_ranking(const std::vector<Vector>& rows, const Vector& q) {
  std::vector<std::pair<double, std::size_t>> d;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    double s = 0;
    for (std::size_t j = 0; j < q.size(); ++j) s += (rows[i][j] - q[j]) * (rows[i][j] - q[j]);
    d.emplace_back(std::sqrt(s), i);
  }
  std::stable_sort(d.begin(), d.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<std::size_t> out;
  for (const auto& e : d) out.push_back(e.second);
  return out;
}

struct Pose3 {
  double x, y, z;
};

// Fraction of correct matches: every query against every reference, top-1
// by descriptor distance, correct iff the pose error is within tau.
inline std::vector<double> brute_force_fcm(const std::vector<Vector>& query_desc,
                                           const std::vector<Pose3>& query_pose,
                                           const std::vector<Vector>& ref_desc,
                                           const std::vector<Pose3>& ref_pose,
                                           const std::vector<double>& taus) {
  std::vector<std::size_t> correct(taus.size(), 0);
  for (std::size_t q = 0; q < query_desc.size(); ++q) {
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t r = 0; r < ref_desc.size(); ++r) {
      double s = 0;
      for (std::size_t j = 0; j < ref_desc[r].size(); ++j) {
        s += (ref_desc[r][j] - query_desc[q][j]) * (ref_desc[r][j] - query_desc[q][j]);
      }
      const double d = std::sqrt(s);
      if (d < best_d) {
        best_d = d;
        best = r;
      }
    }
    const double dx = query_pose[q].x - ref_pose[best].x;
    const double dy = query_pose[q].y - ref_pose[best].y;
    const double dz = query_pose[q].z - ref_pose[best].z;
    const double err = std::sqrt(dx * dx + dy * dy + dz * dz);
    for (std::size_t t = 0; t < taus.size(); ++t) {
      if (err <= taus[t]) ++correct[t];
    }
  }
  std::vector<double> fcm;
  for (std::size_t c : correct) {
    fcm.push_back(static_cast<double>(c) * 100.0 / static_cast<double>(query_desc.size()));
  }
  return fcm;
}

}  // namespace oracle
