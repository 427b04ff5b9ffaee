#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "vprb/core.hpp"

namespace vprb {

enum class SequenceRole { kTrain, kReference, kTest };

std::string_view to_string(SequenceRole role);

struct PosedFrame {
  std::string frame_id;
  Pose pose;
  std::string condition;
  std::string payload_path;                   // as written in the manifest
  std::shared_ptr<const FeatureMap> payload;  // null until loaded
};

struct SequenceManifest {
  std::string name;
  SequenceRole role = SequenceRole::kTest;
  std::string condition;
  std::vector<PosedFrame> frames;

  std::size_t size() const { return frames.size(); }
  /// Non-empty, unique frame ids, non-decreasing timestamps, finite poses.
  void validate() const;
  const FeatureMap& payload(std::size_t i) const;
};

// ---- files ----------------------------------------------------------------

inline constexpr std::string_view kManifestHeader =
    "frame_id,timestamp,x,y,z,condition,payload_path";

/// Parses a manifest CSV. Payload paths stay as written; relative ones are
/// resolved against the manifest directory by load_payloads.
SequenceManifest load_manifest(const std::filesystem::path& path,
                               SequenceRole role = SequenceRole::kTest);
void save_manifest(const SequenceManifest& manifest, const std::filesystem::path& path);

/// Reads every frame's payload. Relative paths resolve against `base_dir`.
void load_payloads(SequenceManifest& manifest, const std::filesystem::path& base_dir);

/// Little-endian "VPRF" file: u32 H, u32 W, u32 D, then H*W*D float64.
FeatureMap read_feature_map(const std::filesystem::path& path);
void write_feature_map(const std::filesystem::path& path, const FeatureMap& map);

// ---- mining ---------------------------------------------------------------

enum class ClassMode { kCell, kBinary };

struct MiningConfig {
  double positive_radius = 5.0;
  double negative_radius = 25.0;
  std::size_t negatives_per_tuple = 4;
  ClassMode class_mode = ClassMode::kCell;
  double class_cell = 20.0;
  std::vector<Pose> binary_anchors;  // empty: the first frame is the anchor

  void validate() const;

  static MiningConfig outdoor() { return {}; }
  static MiningConfig indoor() {
    MiningConfig cfg;
    cfg.positive_radius = 0.25;
    cfg.negative_radius = 2.0;
    cfg.class_cell = 1.0;
    return cfg;
  }
};

/// Indices are frame positions in the mined manifest.
struct LabeledPair {
  std::size_t a = 0;
  std::size_t b = 0;
  bool matching = false;

  friend bool operator==(const LabeledPair&, const LabeledPair&) = default;
};

struct TrainingTuple {
  std::size_t query = 0;
  std::vector<std::size_t> positives;  // ascending distance; front() is the best match
  std::vector<std::size_t> negatives;

  friend bool operator==(const TrainingTuple&, const TrainingTuple&) = default;
};

struct MinedTuples {
  std::vector<TrainingTuple> tuples;
  std::size_t skipped_no_positive = 0;
  std::size_t skipped_no_negative = 0;

  std::size_t skipped() const { return skipped_no_positive + skipped_no_negative; }
};

/// One positive and (when available) one negative pair per frame that has a
/// positive. Frames strictly between the two radii are never paired.
std::vector<LabeledPair> mine_pairs(const SequenceManifest& seq, const MiningConfig& cfg,
                                    std::uint64_t seed);

MinedTuples mine_tuples(const SequenceManifest& seq, const MiningConfig& cfg,
                        std::uint64_t seed);

struct ClassAssignment {
  std::vector<std::size_t> labels;  // per frame
  std::size_t classes = 0;
  std::size_t merged_singletons = 0;

  std::map<std::string, std::size_t> by_frame_id(const SequenceManifest& seq) const;
};

ClassAssignment assign_place_classes(const SequenceManifest& seq, const MiningConfig& cfg);

// ---- synthetic data -------------------------------------------------------

struct SynthSpec {
  double route_length = 200.0;  // meters
  double frame_spacing = 4.0;   // meters
  std::size_t latent_dim = 8;   // payload channel depth
  std::vector<std::string> conditions{"sunny", "cloudy", "sunny", "rainy"};
  double condition_noise = 0.05;
  double style_offset = 1.0;
  std::size_t map_height = 8;
  std::size_t map_width = 8;
  std::size_t nuisance_dims = 2;

  void validate() const;
  std::size_t frame_count() const;
};

/// Train / Reference / Test-01 / Test-02 replays of one loop route.
struct SynthDataset {
  SequenceManifest train;
  SequenceManifest reference;
  SequenceManifest test01;
  SequenceManifest test02;

  std::vector<const SequenceManifest*> tests() const { return {&test01, &test02}; }
};

SynthDataset synth_dataset(std::uint64_t seed, const SynthSpec& spec);

/// Writes four manifests (train.csv, reference.csv, test01.csv, test02.csv)
/// plus payload files under `dir`; payload paths are relative to `dir`.
void write_dataset(SynthDataset& dataset, const std::filesystem::path& dir);

}  // namespace vprb
