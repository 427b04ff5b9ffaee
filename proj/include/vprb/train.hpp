#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vprb/data.hpp"
#include "vprb/losses.hpp"
#include "vprb/model.hpp"

namespace vprb {

struct TrainConfig {
  LossKind loss = LossKind::kTriplet;
  ModelConfig model;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t epochs = 20;
  std::size_t batch_size = 8;
  std::uint64_t seed = 7;
  ContrastiveConfig contrastive;
  TripletConfig triplet;
  ArcFaceConfig arcface;
  MiningConfig mining;

  void validate() const;
};

/// FNV-1a over a canonical rendering of every field.
std::uint64_t config_hash(const TrainConfig& cfg);

/// Mined supervision for one training sequence. Only the part the loss needs
/// is populated.
struct TrainingData {
  std::vector<LabeledPair> pairs;
  MinedTuples tuples;
  ClassAssignment classes;

  std::size_t items(LossKind loss) const;
};

TrainingData prepare_training_data(const SequenceManifest& train_seq, const TrainConfig& cfg);

/// Everything needed to continue training bit-exactly.
struct Checkpoint {
  Model model;
  Model velocity;
  std::size_t epoch = 0;
  std::uint64_t config_hash = 0;
  std::string rng_state;
};

/// Epoch-0 state: initialized model, zero velocity, seeded shuffling RNG.
Checkpoint initialize_training(const TrainConfig& cfg, const SequenceManifest& train_seq,
                               const TrainingData& data);

/// Runs epochs until `checkpoint.epoch == cfg.epochs` (or `max_epochs` more,
/// whichever comes first) and returns the mean loss of each epoch run.
/// Throws TrainingDivergence on a non-finite loss.
std::vector<double> train_epochs(Checkpoint& checkpoint, const TrainConfig& cfg,
                                 const SequenceManifest& train_seq, const TrainingData& data,
                                 std::size_t max_epochs = SIZE_MAX);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<double> epoch_losses;
};

TrainResult train(const TrainConfig& cfg, const SequenceManifest& train_seq);

// ---- checkpoint file ------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Byte image of the checkpoint file (what save_checkpoint writes).
std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint deserialize_checkpoint(const std::string& bytes);

}  // namespace vprb
