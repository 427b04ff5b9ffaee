#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vprb/backbone.hpp"
#include "vprb/core.hpp"
#include "vprb/losses.hpp"
#include "vprb/pooling.hpp"

namespace vprb {

struct SequenceManifest;

struct ModelConfig {
  std::size_t input_depth = 8;
  std::size_t hidden_channels = 16;
  std::size_t output_depth = 16;
  PoolingKind pooling = PoolingKind::kGem;
  double gem_p_init = 3.0;
  bool gem_shared_p = false;
  std::size_t netvlad_clusters = 4;
  bool netvlad_intra_norm = true;
  double netvlad_alpha = kNetVladAlpha;

  void validate() const;
  std::size_t descriptor_length() const;
  /// Short backbone tag used in report tables, e.g. "toy-8-16-16".
  std::string backbone_name() const;
};

/// A named view of one parameter array, in a fixed model-wide order.
template <typename V>
struct BasicParamBlock {
  std::string name;
  std::vector<std::size_t> shape;
  V* values = nullptr;
};
using ParamBlock = BasicParamBlock<Vector>;
using ConstParamBlock = BasicParamBlock<const Vector>;

/// Backbone + pooling head (+ ArcFace classifier when trained with ArcFace).
/// The same type doubles as a gradient and momentum container.
struct Model {
  ModelConfig config;
  ToyBackbone backbone;
  GemParams gem;
  NetVladParams netvlad;
  ArcFaceWeights arcface;

  std::vector<ParamBlock> blocks();
  std::vector<ConstParamBlock> blocks() const;

  /// Same shapes, all values zero.
  Model zeros_like() const;
  void set_zero();

  /// Domain projections applied after every optimizer step.
  void project();

  std::size_t descriptor_length() const { return config.descriptor_length(); }
};

/// Forward state for one frame: payload -> backbone -> pooling -> L2.
struct DescriptorTrace {
  BackboneTrace backbone;
  Vector pooled;
  Normalized descriptor;
};

DescriptorTrace describe_trace(const Model& model, const FeatureMap& payload);
Vector describe(const Model& model, const FeatureMap& payload);

/// Accumulates parameter gradients for dL/d(descriptor) into `grads`.
void describe_backward(const Model& model, const FeatureMap& payload,
                       const DescriptorTrace& trace, std::span<const double> grad_descriptor,
                       Model& grads);

/// Fresh model: seeded He-initialized backbone, GeM p at gem_p_init, NetVLAD
/// from k-means over the backbone's local descriptors of `sample_frames`.
Model init_model(const ModelConfig& cfg, std::uint64_t seed,
                 const std::vector<const FeatureMap*>& sample_frames);

/// Random unit-norm classifier columns.
ArcFaceWeights init_arcface(std::size_t dim, std::size_t classes, std::uint64_t seed);

/// Classic momentum: v <- mu*v - lr*g; theta <- theta + v.
void sgd_update(std::span<double> params, std::span<const double> grads,
                std::span<double> velocity, double lr, double momentum);

/// sgd_update over every block, then Model::project().
void sgd_step(Model& params, const Model& grads, Model& velocity, double lr, double momentum);

}  // namespace vprb
