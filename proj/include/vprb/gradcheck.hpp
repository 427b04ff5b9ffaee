#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vprb/core.hpp"
#include "vprb/pooling.hpp"

namespace vprb {

enum class GradComponent { kGem, kNetVlad, kContrastive, kTriplet, kArcFace, kBackbone };

std::string_view to_string(GradComponent c);
GradComponent parse_grad_component(std::string_view name);
std::vector<GradComponent> all_grad_components();

inline constexpr double kFiniteDifferenceStep = 1e-6;
inline constexpr double kKinkExclusion = 1e-3;

/// One block of inputs to perturb plus the analytic gradient claimed for it.
struct FdBlock {
  std::string name;
  Vector* values = nullptr;
  Vector analytic;
};

struct BlockError {
  std::string name;
  double max_rel_error = 0.0;
};

/// Central differences of `objective` over every entry of every block. The
/// error of a block (all entries sharing a name) is max|analytic - numeric| / max(max|analytic|,
/// max|numeric|, 1e-12).
std::vector<BlockError> compare_with_finite_differences(const std::function<double()>& objective,
                                                        std::vector<FdBlock>& blocks,
                                                        double step = kFiniteDifferenceStep);

struct ComponentReport {
  GradComponent component = GradComponent::kGem;
  std::size_t trials = 0;
  std::size_t kink_skips = 0;
  std::vector<BlockError> blocks;  // worst error per block over all trials
  double max_rel_error = 0.0;
  bool passed = false;
};

struct GradCheckReport {
  double tolerance = 0.0;
  std::vector<ComponentReport> components;

  bool passed() const;
  std::string to_text() const;
};

using GemBackwardFn =
    std::function<GemGradients(const FeatureMap&, const GemParams&, std::span<const double>)>;

ComponentReport check_gem(std::size_t trials, double tol, std::uint64_t seed,
                          const GemBackwardFn& backward = gem_backward);
ComponentReport check_component(GradComponent component, std::size_t trials, double tol,
                                std::uint64_t seed);

GradCheckReport grad_check(std::span<const GradComponent> components, std::size_t trials,
                           double tol, std::uint64_t seed = 1234);

}  // namespace vprb
