#pragma once

#include <cstddef>

#include "vprb/core.hpp"
#include "vprb/random.hpp"

namespace vprb {

/// 3x3 convolution, stride 1, zero padding. weight is out x in x 3 x 3.
struct ConvLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  Vector weight;
  Vector bias;

  ConvLayer() = default;
  ConvLayer(std::size_t in_channels, std::size_t out_channels)
      : in(in_channels), out(out_channels), weight(out_channels * in_channels * 9, 0.0),
        bias(out_channels, 0.0) {}

  std::size_t widx(std::size_t o, std::size_t i, std::size_t ky, std::size_t kx) const {
    return ((o * in + i) * 3 + ky) * 3 + kx;
  }
};

/// Pre-activation output of a 3x3 same-padding convolution.
FeatureMap conv3x3_forward(const FeatureMap& input, const ConvLayer& layer);

struct ConvGradients {
  FeatureMap grad_input;
  Vector grad_weight;
  Vector grad_bias;
};

ConvGradients conv3x3_backward(const FeatureMap& input, const ConvLayer& layer,
                               const FeatureMap& grad_pre);

/// Two conv + ReLU stages: input_depth -> hidden -> output_depth.
struct ToyBackbone {
  ConvLayer conv1;
  ConvLayer conv2;

  std::size_t input_depth() const { return conv1.in; }
  std::size_t output_depth() const { return conv2.out; }

  /// He-style uniform init, bound sqrt(6 / fan_in), zero biases.
  static ToyBackbone he_init(std::size_t input_depth, std::size_t hidden,
                             std::size_t output_depth, Rng& rng);
};

struct BackboneTrace {
  FeatureMap pre1;
  FeatureMap act1;
  FeatureMap pre2;
  FeatureMap act2;  // the output
};

BackboneTrace backbone_trace(const FeatureMap& input, const ToyBackbone& net);
FeatureMap backbone_forward(const FeatureMap& input, const ToyBackbone& net);

struct BackboneGradients {
  FeatureMap grad_input;
  ToyBackbone grad;  // same layout as the network
};

BackboneGradients backbone_backward(const ToyBackbone& net, const FeatureMap& input,
                                    const BackboneTrace& trace, const FeatureMap& grad_out);
BackboneGradients backbone_backward(const ToyBackbone& net, const FeatureMap& input,
                                    const FeatureMap& grad_out);

}  // namespace vprb
