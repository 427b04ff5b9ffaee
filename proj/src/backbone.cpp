#include "vprb/backbone.hpp"

#include <cmath>

#include <fmt/format.h>

namespace vprb {

FeatureMap conv3x3_forward(const FeatureMap& input, const ConvLayer& layer) {
  if (input.depth() != layer.in) {
    throw DimensionError(fmt::format("conv: input depth {} vs layer input {}", input.depth(),
                                     layer.in));
  }
  const std::size_t height = input.height();
  const std::size_t width = input.width();
  FeatureMap out(height, width, layer.out);
  for (std::size_t h = 0; h < height; ++h) {
    for (std::size_t w = 0; w < width; ++w) {
      auto y = out.location(h * width + w);
      for (std::size_t o = 0; o < layer.out; ++o) y[o] = layer.bias[o];
      for (std::size_t ky = 0; ky < 3; ++ky) {
        const long sh = static_cast<long>(h) + static_cast<long>(ky) - 1;
        if (sh < 0 || sh >= static_cast<long>(height)) continue;
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const long sw = static_cast<long>(w) + static_cast<long>(kx) - 1;
          if (sw < 0 || sw >= static_cast<long>(width)) continue;
          const auto x = input.location(static_cast<std::size_t>(sh) * width +
                                        static_cast<std::size_t>(sw));
          for (std::size_t o = 0; o < layer.out; ++o) {
            double acc = 0.0;
            for (std::size_t i = 0; i < layer.in; ++i) acc += layer.weight[layer.widx(o, i, ky, kx)] * x[i];
            y[o] += acc;
          }
        }
      }
    }
  }
  return out;
}

ConvGradients conv3x3_backward(const FeatureMap& input, const ConvLayer& layer,
                               const FeatureMap& grad_pre) {
  const std::size_t height = input.height();
  const std::size_t width = input.width();
  ConvGradients g{FeatureMap(height, width, layer.in), Vector(layer.weight.size(), 0.0),
                  Vector(layer.out, 0.0)};
  for (std::size_t h = 0; h < height; ++h) {
    for (std::size_t w = 0; w < width; ++w) {
      const auto gy = grad_pre.location(h * width + w);
      for (std::size_t o = 0; o < layer.out; ++o) g.grad_bias[o] += gy[o];
      for (std::size_t ky = 0; ky < 3; ++ky) {
        const long sh = static_cast<long>(h) + static_cast<long>(ky) - 1;
        if (sh < 0 || sh >= static_cast<long>(height)) continue;
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const long sw = static_cast<long>(w) + static_cast<long>(kx) - 1;
          if (sw < 0 || sw >= static_cast<long>(width)) continue;
          const std::size_t src = static_cast<std::size_t>(sh) * width + static_cast<std::size_t>(sw);
          const auto x = input.location(src);
          auto gx = g.grad_input.location(src);
          for (std::size_t o = 0; o < layer.out; ++o) {
            if (gy[o] == 0.0) continue;
            for (std::size_t i = 0; i < layer.in; ++i) {
              const std::size_t k = layer.widx(o, i, ky, kx);
              g.grad_weight[k] += gy[o] * x[i];
              gx[i] += gy[o] * layer.weight[k];
            }
          }
        }
      }
    }
  }
  return g;
}

ToyBackbone ToyBackbone::he_init(std::size_t input_depth, std::size_t hidden,
                                 std::size_t output_depth, Rng& rng) {
  ToyBackbone net{ConvLayer(input_depth, hidden), ConvLayer(hidden, output_depth)};
  for (ConvLayer* layer : {&net.conv1, &net.conv2}) {
    const double bound = std::sqrt(6.0 / static_cast<double>(layer->in * 9));
    for (double& v : layer->weight) v = uniform(rng, -bound, bound);
  }
  return net;
}

namespace {

FeatureMap relu(const FeatureMap& pre) {
  FeatureMap out = pre;
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return out;
}

FeatureMap relu_backward(const FeatureMap& pre, const FeatureMap& grad) {
  FeatureMap out = grad;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(pre.values()[i] > 0.0)) out.values()[i] = 0.0;
  }
  return out;
}

}  // namespace

BackboneTrace backbone_trace(const FeatureMap& input, const ToyBackbone& net) {
  BackboneTrace t;
  t.pre1 = conv3x3_forward(input, net.conv1);
  t.act1 = relu(t.pre1);
  t.pre2 = conv3x3_forward(t.act1, net.conv2);
  t.act2 = relu(t.pre2);
  return t;
}

FeatureMap backbone_forward(const FeatureMap& input, const ToyBackbone& net) {
  return backbone_trace(input, net).act2;
}

BackboneGradients backbone_backward(const ToyBackbone& net, const FeatureMap& input,
                                    const BackboneTrace& trace, const FeatureMap& grad_out) {
  if (!grad_out.same_shape(trace.act2)) {
    throw DimensionError("backbone_backward: gradient shape does not match the output");
  }
  const ConvGradients g2 = conv3x3_backward(trace.act1, net.conv2,
                                            relu_backward(trace.pre2, grad_out));
  const ConvGradients g1 = conv3x3_backward(input, net.conv1,
                                            relu_backward(trace.pre1, g2.grad_input));
  BackboneGradients out;
  out.grad_input = g1.grad_input;
  out.grad.conv1 = ConvLayer(net.conv1.in, net.conv1.out);
  out.grad.conv1.weight = g1.grad_weight;
  out.grad.conv1.bias = g1.grad_bias;
  out.grad.conv2 = ConvLayer(net.conv2.in, net.conv2.out);
  out.grad.conv2.weight = g2.grad_weight;
  out.grad.conv2.bias = g2.grad_bias;
  return out;
}

BackboneGradients backbone_backward(const ToyBackbone& net, const FeatureMap& input,
                                    const FeatureMap& grad_out) {
  return backbone_backward(net, input, backbone_trace(input, net), grad_out);
}

}  // namespace vprb
