#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vprb/data.hpp"
#include "vprb/report.hpp"
#include "vprb/train.hpp"

namespace vprb {

struct DatasetConfig {
  bool synthetic = true;
  SynthSpec synth;
  // Manifest mode; relative paths resolve against the config file directory.
  std::filesystem::path train;
  std::filesystem::path reference;
  std::vector<std::filesystem::path> tests;
};

struct EvalConfig {
  std::vector<double> taus{25.0, 10.0, 5.0, 2.0};  // meters
  TauUnit unit = TauUnit::kMeters;
  std::size_t top_n = 5;
};

struct MatrixConfig {
  std::vector<PoolingKind> poolings{PoolingKind::kMac, PoolingKind::kSpoc, PoolingKind::kGem,
                                    PoolingKind::kNetVlad};
  std::vector<LossKind> losses{LossKind::kContrastive, LossKind::kTriplet, LossKind::kArcFace};
};

/// Per-loss learning rates; unset entries fall back to train.learning_rate.
struct LossLearningRates {
  std::optional<double> contrastive;
  std::optional<double> triplet;
  std::optional<double> arcface;

  std::optional<double> get(LossKind loss) const;
};

struct RunConfig {
  std::uint64_t seed = 7;
  DatasetConfig dataset;
  TrainConfig train;  // train.seed mirrors seed
  LossLearningRates loss_learning_rates;
  EvalConfig eval;
  MatrixConfig matrix;

  /// Training config for one (pooling, loss) cell.
  TrainConfig train_config(PoolingKind pooling, LossKind loss) const;
};

/// The JSON Schema (draft-07 subset) every config is checked against.
std::string_view run_config_schema();

/// Parses and validates JSON text. `overrides` are "dotted.key=value" pairs
/// applied before validation; a value that parses as JSON is used as such,
/// anything else as a string. `base_dir` anchors relative manifest paths.
/// Throws ConfigError.
RunConfig parse_run_config(std::string_view json_text,
                           const std::vector<std::string>& overrides = {},
                           const std::filesystem::path& base_dir = ".",
                           std::optional<std::uint64_t> seed_override = std::nullopt);

/// Reads the file and applies VPRB_SEED from the environment when set.
RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides = {});

/// Canonical JSON rendering (used for hashing stage inputs).
std::string to_json(const RunConfig& cfg);

}  // namespace vprb
