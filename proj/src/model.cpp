#include "vprb/model.hpp"

#include <fmt/format.h>

namespace vprb {

void ModelConfig::validate() const {
  if (input_depth == 0 || hidden_channels == 0 || output_depth == 0) {
    throw InvalidInput("model: channel counts must be >= 1");
  }
  if (pooling == PoolingKind::kGem && !(gem_p_init >= kGemMinP && gem_p_init <= kGemMaxP)) {
    throw InvalidInput(fmt::format("model: gem_p_init {} outside [{}, {}]", gem_p_init,
                                   kGemMinP, kGemMaxP));
  }
  if (pooling == PoolingKind::kNetVlad && netvlad_clusters == 0) {
    throw InvalidInput("model: netvlad_clusters must be >= 1");
  }
}

std::size_t ModelConfig::descriptor_length() const {
  return pooling == PoolingKind::kNetVlad ? output_depth * netvlad_clusters : output_depth;
}

std::string ModelConfig::backbone_name() const {
  return fmt::format("toy-{}-{}-{}", input_depth, hidden_channels, output_depth);
}

namespace {

template <typename Block, typename Self>
std::vector<Block> collect_blocks(Self& m) {
  std::vector<Block> out;
  const auto& c1 = m.backbone.conv1;
  const auto& c2 = m.backbone.conv2;
  out.push_back({"backbone.conv1.weight", {c1.out, c1.in, 3, 3}, &m.backbone.conv1.weight});
  out.push_back({"backbone.conv1.bias", {c1.out}, &m.backbone.conv1.bias});
  out.push_back({"backbone.conv2.weight", {c2.out, c2.in, 3, 3}, &m.backbone.conv2.weight});
  out.push_back({"backbone.conv2.bias", {c2.out}, &m.backbone.conv2.bias});
  if (m.config.pooling == PoolingKind::kGem) {
    out.push_back({"gem.p", {m.gem.p.size()}, &m.gem.p});
  } else if (m.config.pooling == PoolingKind::kNetVlad) {
    const std::size_t k = m.netvlad.clusters;
    const std::size_t d = m.netvlad.depth;
    out.push_back({"netvlad.weights", {k, d}, &m.netvlad.weights});
    out.push_back({"netvlad.biases", {k}, &m.netvlad.biases});
    out.push_back({"netvlad.centroids", {k, d}, &m.netvlad.centroids});
  }
  if (m.arcface.classes > 0) {
    out.push_back({"arcface.weights", {m.arcface.classes, m.arcface.dim}, &m.arcface.values});
  }
  return out;
}

}  // namespace

std::vector<ParamBlock> Model::blocks() { return collect_blocks<ParamBlock>(*this); }

std::vector<ConstParamBlock> Model::blocks() const {
  return collect_blocks<ConstParamBlock>(*this);
}

Model Model::zeros_like() const {
  Model z = *this;
  z.set_zero();
  return z;
}

void Model::set_zero() {
  for (auto& b : blocks()) std::fill(b.values->begin(), b.values->end(), 0.0);
}

void Model::project() {
  if (config.pooling == PoolingKind::kGem) gem.clamp();
  if (arcface.classes > 0) arcface.normalize_columns();
}

DescriptorTrace describe_trace(const Model& model, const FeatureMap& payload) {
  DescriptorTrace t;
  t.backbone = backbone_trace(payload, model.backbone);
  const FeatureMap& fmap = t.backbone.act2;
  switch (model.config.pooling) {
    case PoolingKind::kMac: t.pooled = mac_pool(fmap); break;
    case PoolingKind::kSpoc: t.pooled = spoc_pool(fmap); break;
    case PoolingKind::kGem: t.pooled = gem_pool(fmap, model.gem); break;
    case PoolingKind::kNetVlad:
      t.pooled = netvlad_forward(fmap, model.netvlad, {model.config.netvlad_intra_norm});
      break;
  }
  t.descriptor = l2_normalize(t.pooled);
  return t;
}

Vector describe(const Model& model, const FeatureMap& payload) {
  return describe_trace(model, payload).descriptor.values;
}

namespace {

void accumulate(Vector& into, std::span<const double> g) {
  for (std::size_t i = 0; i < into.size(); ++i) into[i] += g[i];
}

}  // namespace

void describe_backward(const Model& model, const FeatureMap& payload,
                       const DescriptorTrace& trace, std::span<const double> grad_descriptor,
                       Model& grads) {
  const Vector grad_pooled = l2_normalize_backward(trace.descriptor, grad_descriptor);
  const FeatureMap& fmap = trace.backbone.act2;
  FeatureMap grad_map;
  switch (model.config.pooling) {
    case PoolingKind::kMac: grad_map = mac_backward(fmap, grad_pooled); break;
    case PoolingKind::kSpoc: grad_map = spoc_backward(fmap, grad_pooled); break;
    case PoolingKind::kGem: {
      GemGradients g = gem_backward(fmap, model.gem, grad_pooled);
      accumulate(grads.gem.p, g.grad_p);
      grad_map = std::move(g.grad_map);
      break;
    }
    case PoolingKind::kNetVlad: {
      NetVladGradients g =
          netvlad_backward(fmap, model.netvlad, grad_pooled, {model.config.netvlad_intra_norm});
      accumulate(grads.netvlad.weights, g.grad_weights);
      accumulate(grads.netvlad.biases, g.grad_biases);
      accumulate(grads.netvlad.centroids, g.grad_centroids);
      grad_map = std::move(g.grad_map);
      break;
    }
  }
  const BackboneGradients gb = backbone_backward(model.backbone, payload, trace.backbone, grad_map);
  accumulate(grads.backbone.conv1.weight, gb.grad.conv1.weight);
  accumulate(grads.backbone.conv1.bias, gb.grad.conv1.bias);
  accumulate(grads.backbone.conv2.weight, gb.grad.conv2.weight);
  accumulate(grads.backbone.conv2.bias, gb.grad.conv2.bias);
}

Model init_model(const ModelConfig& cfg, std::uint64_t seed,
                 const std::vector<const FeatureMap*>& sample_frames) {
  cfg.validate();
  Model model;
  model.config = cfg;
  Rng rng(derive_seed(seed, 10));
  model.backbone = ToyBackbone::he_init(cfg.input_depth, cfg.hidden_channels,
                                        cfg.output_depth, rng);
  if (cfg.pooling == PoolingKind::kGem) {
    model.gem = cfg.gem_shared_p ? GemParams::shared_exponent(cfg.gem_p_init)
                                 : GemParams::per_channel(cfg.output_depth, cfg.gem_p_init);
  } else if (cfg.pooling == PoolingKind::kNetVlad) {
    std::vector<Vector> sample;
    for (const FeatureMap* frame : sample_frames) {
      const FeatureMap out = backbone_forward(*frame, model.backbone);
      for (std::size_t i = 0; i < out.locations(); ++i) {
        const auto x = out.location(i);
        sample.emplace_back(x.begin(), x.end());
      }
    }
    model.netvlad = netvlad_init(sample, cfg.netvlad_clusters, derive_seed(seed, 11),
                                 cfg.netvlad_alpha);
  }
  return model;
}

ArcFaceWeights init_arcface(std::size_t dim, std::size_t classes, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 12));
  ArcFaceWeights w(dim, classes);
  for (double& v : w.values) v = standard_normal(rng);
  w.normalize_columns();
  return w;
}

void sgd_update(std::span<double> params, std::span<const double> grads,
                std::span<double> velocity, double lr, double momentum) {
  if (params.size() != grads.size() || params.size() != velocity.size()) {
    throw DimensionError(fmt::format("sgd: {} params, {} grads, {} velocity", params.size(),
                                     grads.size(), velocity.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = momentum * velocity[i] - lr * grads[i];
    params[i] += velocity[i];
  }
}

void sgd_step(Model& params, const Model& grads, Model& velocity, double lr, double momentum) {
  auto p = params.blocks();
  const auto g = grads.blocks();
  auto v = velocity.blocks();
  if (p.size() != g.size() || p.size() != v.size()) {
    throw DimensionError("sgd: parameter, gradient and velocity layouts differ");
  }
  for (std::size_t b = 0; b < p.size(); ++b) {
    if (p[b].name != g[b].name || p[b].name != v[b].name) {
      throw DimensionError(fmt::format("sgd: block '{}' does not line up", p[b].name));
    }
    sgd_update(*p[b].values, *g[b].values, *v[b].values, lr, momentum);
  }
  params.project();
}

}  // namespace vprb
