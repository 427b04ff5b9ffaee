#include "vprb/gradcheck.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>

#include <fmt/format.h>

#include "vprb/backbone.hpp"
#include "vprb/losses.hpp"
#include "vprb/random.hpp"

namespace vprb {

std::string_view to_string(GradComponent c) {
  switch (c) {
    case GradComponent::kGem: return "gem";
    case GradComponent::kNetVlad: return "netvlad";
    case GradComponent::kContrastive: return "contrastive";
    case GradComponent::kTriplet: return "triplet";
    case GradComponent::kArcFace: return "arcface";
    case GradComponent::kBackbone: return "backbone";
  }
  return "unknown";
}

std::vector<GradComponent> all_grad_components() {
  return {GradComponent::kGem,     GradComponent::kNetVlad, GradComponent::kContrastive,
          GradComponent::kTriplet, GradComponent::kArcFace, GradComponent::kBackbone};
}

GradComponent parse_grad_component(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (GradComponent c : all_grad_components()) {
    if (to_string(c) == lower) return c;
  }
  throw InvalidInput(fmt::format("unknown gradient-check component '{}'", name));
}

std::vector<BlockError> compare_with_finite_differences(const std::function<double()>& objective,
                                                        std::vector<FdBlock>& blocks,
                                                        double step) {
  // Entries sharing a name form one parameter block (e.g. every feature in a
  // batch), so the error is scaled by the block's largest gradient.
  std::vector<BlockError> out;
  std::vector<double> diffs;
  std::vector<double> scales;
  for (auto& block : blocks) {
    Vector& x = *block.values;
    if (block.analytic.size() != x.size()) {
      throw DimensionError(fmt::format("gradcheck: block '{}' has {} values, {} gradients",
                                       block.name, x.size(), block.analytic.size()));
    }
    double max_diff = 0.0;
    double scale = 1e-12;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double saved = x[i];
      x[i] = saved + step;
      const double up = objective();
      x[i] = saved - step;
      const double down = objective();
      x[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      max_diff = std::max(max_diff, std::abs(numeric - block.analytic[i]));
      scale = std::max({scale, std::abs(numeric), std::abs(block.analytic[i])});
    }
    const auto it = std::find_if(out.begin(), out.end(),
                                 [&](const BlockError& b) { return b.name == block.name; });
    if (it == out.end()) {
      out.push_back({block.name, 0.0});
      diffs.push_back(max_diff);
      scales.push_back(scale);
    } else {
      const auto k = static_cast<std::size_t>(it - out.begin());
      diffs[k] = std::max(diffs[k], max_diff);
      scales[k] = std::max(scales[k], scale);
    }
  }
  for (std::size_t k = 0; k < out.size(); ++k) out[k].max_rel_error = diffs[k] / scales[k];
  return out;
}

bool GradCheckReport::passed() const {
  return std::all_of(components.begin(), components.end(),
                     [](const ComponentReport& c) { return c.passed; });
}

std::string GradCheckReport::to_text() const {
  std::string out = fmt::format("gradient check (central differences, step {:g}, tol {:g})\n",
                                kFiniteDifferenceStep, tolerance);
  for (const auto& c : components) {
    out += fmt::format("  {:<12} {} trials={} kink_skips={} max_rel_error={:.3e}\n",
                       to_string(c.component), c.passed ? "PASS" : "FAIL", c.trials,
                       c.kink_skips, c.max_rel_error);
    for (const auto& b : c.blocks) {
      out += fmt::format("      {:<24} {:.3e}\n", b.name, b.max_rel_error);
    }
  }
  out += passed() ? "result: PASS\n" : "result: FAIL\n";
  return out;
}

namespace {

Vector random_vector(std::size_t n, Rng& rng, double lo, double hi) {
  Vector v(n);
  for (double& x : v) x = uniform(rng, lo, hi);
  return v;
}

Vector gaussian_vector(std::size_t n, Rng& rng, double sigma) {
  Vector v(n);
  for (double& x : v) x = sigma * standard_normal(rng);
  return v;
}

// Folds one trial's per-block errors into the running worst case.
void merge(ComponentReport& report, const std::vector<BlockError>& errors) {
  for (const auto& e : errors) {
    auto it = std::find_if(report.blocks.begin(), report.blocks.end(),
                           [&](const BlockError& b) { return b.name == e.name; });
    if (it == report.blocks.end()) {
      report.blocks.push_back(e);
    } else {
      it->max_rel_error = std::max(it->max_rel_error, e.max_rel_error);
    }
    report.max_rel_error = std::max(report.max_rel_error, e.max_rel_error);
  }
}

void finish(ComponentReport& report, double tol) {
  report.passed = report.trials > 0 && report.max_rel_error <= tol;
}

// Runs `trial` until `trials` instances were checked. A trial returns false
// when its random instance sits within kKinkExclusion of a non-smooth point.
template <typename Trial>
ComponentReport run_trials(GradComponent component, std::size_t trials, double tol,
                           std::uint64_t seed, Trial&& trial) {
  ComponentReport report;
  report.component = component;
  Rng rng(seed);
  const std::size_t max_attempts = trials * 50 + 100;
  for (std::size_t attempt = 0; report.trials < trials && attempt < max_attempts; ++attempt) {
    std::vector<BlockError> errors;
    if (!trial(rng, errors)) {
      ++report.kink_skips;
      continue;
    }
    merge(report, errors);
    ++report.trials;
  }
  finish(report, tol);
  return report;
}

ComponentReport check_netvlad(std::size_t trials, double tol, std::uint64_t seed) {
  return run_trials(GradComponent::kNetVlad, trials, tol, seed,
                    [](Rng& rng, std::vector<BlockError>& errors) {
    const std::size_t h = 2, w = 2, d = 3, k = 2;
    FeatureMap map(h, w, d, random_vector(h * w * d, rng, -1.0, 1.0));
    NetVladParams params(k, d);
    params.weights = gaussian_vector(k * d, rng, 1.0);
    params.biases = gaussian_vector(k, rng, 0.5);
    params.centroids = gaussian_vector(k * d, rng, 0.5);
    const NetVladOptions options{rng() % 4 != 0};
    const Vector g = gaussian_vector(k * d, rng, 1.0);

    const NetVladGradients an = netvlad_backward(map, params, g, options);
    auto objective = [&] { return dot(g, netvlad_forward(map, params, options)); };
    std::vector<FdBlock> blocks{{"map", &map.values(), an.grad_map.values()},
                                {"weights", &params.weights, an.grad_weights},
                                {"biases", &params.biases, an.grad_biases},
                                {"centroids", &params.centroids, an.grad_centroids}};
    errors = compare_with_finite_differences(objective, blocks);
    return true;
  });
}

ComponentReport check_contrastive(std::size_t trials, double tol, std::uint64_t seed) {
  return run_trials(GradComponent::kContrastive, trials, tol, seed,
                    [](Rng& rng, std::vector<BlockError>& errors) {
    const std::size_t dim = 6;
    Vector a = gaussian_vector(dim, rng, 0.3);
    Vector b = gaussian_vector(dim, rng, 0.3);
    const bool matching = rng() % 2 == 0;
    ContrastiveConfig cfg;
    cfg.margin = 0.7;
    cfg.distance = rng() % 2 == 0 ? PairDistance::kSquaredEuclidean : PairDistance::kEuclidean;
    const double sq = squared_l2_distance(a, b);
    const double l = cfg.distance == PairDistance::kEuclidean ? std::sqrt(sq) : sq;
    if (!matching && std::abs(cfg.margin - l) < kKinkExclusion) return false;
    if (cfg.distance == PairDistance::kEuclidean && l < kKinkExclusion) return false;

    const PairLoss an = contrastive_loss(a, b, matching, cfg);
    auto objective = [&] { return contrastive_loss(a, b, matching, cfg).loss; };
    std::vector<FdBlock> blocks{{"a", &a, an.grad_a}, {"b", &b, an.grad_b}};
    errors = compare_with_finite_differences(objective, blocks);
    return true;
  });
}

ComponentReport check_triplet(std::size_t trials, double tol, std::uint64_t seed) {
  return run_trials(GradComponent::kTriplet, trials, tol, seed,
                    [](Rng& rng, std::vector<BlockError>& errors) {
    const std::size_t dim = 6, n_neg = 3;
    Vector q = gaussian_vector(dim, rng, 0.3);
    Vector p = gaussian_vector(dim, rng, 0.3);
    std::vector<Vector> negs;
    for (std::size_t j = 0; j < n_neg; ++j) negs.push_back(gaussian_vector(dim, rng, 0.3));
    const TripletConfig cfg{0.5};
    const double d_pos = squared_l2_distance(q, p);
    for (const auto& n : negs) {
      if (std::abs(d_pos - squared_l2_distance(q, n) + cfg.margin) < kKinkExclusion) return false;
    }

    const TripletLoss an = triplet_loss(q, p, negs, cfg);
    auto objective = [&] { return triplet_loss(q, p, negs, cfg).loss; };
    std::vector<FdBlock> blocks{{"query", &q, an.grad_query}, {"positive", &p, an.grad_positive}};
    for (std::size_t j = 0; j < n_neg; ++j) {
      blocks.push_back({"negatives", &negs[j], an.grad_negatives[j]});
    }
    errors = compare_with_finite_differences(objective, blocks);
    return true;
  });
}

ComponentReport check_arcface(std::size_t trials, double tol, std::uint64_t seed) {
  return run_trials(GradComponent::kArcFace, trials, tol, seed,
                    [](Rng& rng, std::vector<BlockError>& errors) {
    const std::size_t batch = 4, dim = 8, classes = 3;
    std::vector<Vector> features;
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < batch; ++i) {
      features.push_back(gaussian_vector(dim, rng, 1.0));
      labels.push_back(uniform_index(rng, classes));
    }
    ArcFaceWeights weights(dim, classes);
    weights.values = gaussian_vector(dim * classes, rng, 1.0);
    const ArcFaceConfig cfg{30.0, 0.2};

    const ArcFaceLoss an = arcface_loss(features, labels, weights, cfg);
    auto objective = [&] { return arcface_loss(features, labels, weights, cfg).loss; };
    std::vector<FdBlock> blocks;
    for (std::size_t i = 0; i < batch; ++i) {
      blocks.push_back({"features", &features[i], an.grad_features[i]});
    }
    blocks.push_back({"weights", &weights.values, an.grad_weights});
    errors = compare_with_finite_differences(objective, blocks);
    return true;
  });
}

ComponentReport check_backbone(std::size_t trials, double tol, std::uint64_t seed) {
  return run_trials(GradComponent::kBackbone, trials, tol, seed,
                    [](Rng& rng, std::vector<BlockError>& errors) {
    const std::size_t h = 3, w = 3, in = 2, hidden = 3, out = 2;
    FeatureMap input(h, w, in, random_vector(h * w * in, rng, -1.0, 1.0));
    ToyBackbone net{ConvLayer(in, hidden), ConvLayer(hidden, out)};
    for (ConvLayer* layer : {&net.conv1, &net.conv2}) {
      layer->weight = gaussian_vector(layer->weight.size(), rng, 0.5);
      layer->bias = gaussian_vector(layer->bias.size(), rng, 0.2);
    }
    const BackboneTrace trace = backbone_trace(input, net);
    for (const FeatureMap* pre : {&trace.pre1, &trace.pre2}) {
      for (double z : pre->values()) {
        if (std::abs(z) < kKinkExclusion) return false;
      }
    }
    const FeatureMap g(h, w, out, gaussian_vector(h * w * out, rng, 1.0));

    const BackboneGradients an = backbone_backward(net, input, trace, g);
    auto objective = [&] { return dot(g.values(), backbone_forward(input, net).values()); };
    std::vector<FdBlock> blocks{{"input", &input.values(), an.grad_input.values()},
                                {"conv1.weight", &net.conv1.weight, an.grad.conv1.weight},
                                {"conv1.bias", &net.conv1.bias, an.grad.conv1.bias},
                                {"conv2.weight", &net.conv2.weight, an.grad.conv2.weight},
                                {"conv2.bias", &net.conv2.bias, an.grad.conv2.bias}};
    errors = compare_with_finite_differences(objective, blocks);
    return true;
  });
}

}  // namespace

ComponentReport check_gem(std::size_t trials, double tol, std::uint64_t seed,
                          const GemBackwardFn& backward) {
  return run_trials(GradComponent::kGem, trials, tol, seed,
                    [&backward](Rng& rng, std::vector<BlockError>& errors) {
    const std::size_t h = 3, w = 3, d = 2;
    FeatureMap map(h, w, d, random_vector(h * w * d, rng, 0.1, 2.0));
    GemParams params = rng() % 4 == 0 ? GemParams::shared_exponent(uniform(rng, 1.5, 4.0))
                                      : GemParams{random_vector(d, rng, 1.5, 4.0)};
    const Vector g = gaussian_vector(d, rng, 1.0);

    const GemGradients an = backward(map, params, g);
    auto objective = [&] { return dot(g, gem_pool(map, params)); };
    std::vector<FdBlock> blocks{{"map", &map.values(), an.grad_map.values()},
                                {"p", &params.p, an.grad_p}};
    errors = compare_with_finite_differences(objective, blocks);
    return true;
  });
}

ComponentReport check_component(GradComponent component, std::size_t trials, double tol,
                                std::uint64_t seed) {
  switch (component) {
    case GradComponent::kGem: return check_gem(trials, tol, seed);
    case GradComponent::kNetVlad: return check_netvlad(trials, tol, seed);
    case GradComponent::kContrastive: return check_contrastive(trials, tol, seed);
    case GradComponent::kTriplet: return check_triplet(trials, tol, seed);
    case GradComponent::kArcFace: return check_arcface(trials, tol, seed);
    case GradComponent::kBackbone: return check_backbone(trials, tol, seed);
  }
  throw InvalidInput("unknown gradient-check component");
}

GradCheckReport grad_check(std::span<const GradComponent> components, std::size_t trials,
                           double tol, std::uint64_t seed) {
  if (trials == 0) throw InvalidInput("grad_check: trials must be >= 1");
  GradCheckReport report;
  report.tolerance = tol;
  for (GradComponent c : components) {
    report.components.push_back(
        check_component(c, trials, tol, derive_seed(seed, static_cast<std::uint64_t>(c))));
  }
  return report;
}

}  // namespace vprb
