#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "vprb/gradcheck.hpp"
#include "vprb/retrieval.hpp"
#include "vprb/run_config.hpp"
#include "vprb/train.hpp"

namespace vprb {

// CLI exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitDivergence = 3;
inline constexpr int kExitGradCheck = 4;

/// Train, reference and test sequences with payloads loaded.
struct PipelineData {
  SequenceManifest train;
  SequenceManifest reference;
  std::vector<SequenceManifest> tests;
};

/// Synthesizes or loads the dataset described by the config. Manifest-mode
/// errors name the offending path.
PipelineData load_pipeline_data(const RunConfig& cfg);

/// Outcome of one (pooling, loss) cell: trained and untrained-baseline
/// reports per test sequence.
struct CellResult {
  PoolingKind pooling = PoolingKind::kGem;
  LossKind loss = LossKind::kTriplet;
  bool failed = false;
  std::string error;
  int exit_code = kExitOk;
  TrainResult training;
  std::vector<MatchReport> trained;
  std::vector<MatchReport> untrained;
};

/// Trains one cell and evaluates it next to its untrained initialization.
/// Exceptions propagate; cmd_matrix catches them per cell.
CellResult run_cell(const RunConfig& cfg, const PipelineData& data, PoolingKind pooling,
                    LossKind loss);

/// Maps the exception currently being handled onto an exit code, writing a
/// one-line diagnostic to `err`.
int exit_code_for_current_exception(std::ostream& err);

struct RunOptions {
  std::filesystem::path config;
  std::vector<std::string> overrides;
  std::filesystem::path out = "out";
  std::size_t jobs = 1;
};

int cmd_run(const RunOptions& options, std::ostream& log, std::ostream& err);
int cmd_matrix(const RunOptions& options, std::ostream& log, std::ostream& err);

struct GradCheckOptions {
  std::vector<GradComponent> components;  // empty: all
  std::size_t trials = 50;
  double tol = 1e-4;
  std::uint64_t seed = 1234;
};

int cmd_gradcheck(const GradCheckOptions& options, std::ostream& log, std::ostream& err);

/// Writes the configured synthetic dataset (manifests + payloads) under out.
int cmd_synth(const RunOptions& options, std::ostream& log, std::ostream& err);

/// Re-renders a report CSV as CSV or Markdown.
int cmd_report(const std::filesystem::path& csv, ReportFormat format, TauUnit unit,
               std::ostream& out, std::ostream& err);

}  // namespace vprb
