#include "vprb/train.hpp"

#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "vprb/random.hpp"

namespace vprb {

void TrainConfig::validate() const {
  model.validate();
  mining.validate();
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw InvalidInput("train: learning_rate must be >= 0");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidInput("train: momentum must be in [0, 1)");
  if (epochs == 0) throw InvalidInput("train: epochs must be >= 1");
  if (batch_size == 0) throw InvalidInput("train: batch_size must be >= 1");
  if (!(contrastive.margin > 0.0)) throw InvalidInput("train: contrastive margin must be > 0");
  if (!(triplet.margin > 0.0)) throw InvalidInput("train: triplet margin must be > 0");
  if (!(arcface.scale > 0.0)) throw InvalidInput("train: arcface scale must be > 0");
  if (!(arcface.margin >= 0.0 && arcface.margin < std::numbers::pi / 2)) {
    throw InvalidInput("train: arcface margin must be in [0, pi/2)");
  }
}

namespace {

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::uint64_t config_hash(const TrainConfig& c) {
  const auto& m = c.model;
  std::string anchors;
  for (const auto& a : c.mining.binary_anchors) anchors += fmt::format("({},{},{})", a.x, a.y, a.z);
  const std::string text = fmt::format(
      "loss={};in={};hidden={};out={};pool={};p0={};shared={};K={};intra={};alpha={};"
      "lr={};mu={};epochs={};batch={};seed={};cm={};cd={};tm={};as={};am={};"
      "rp={};rn={};negs={};cls={};cell={};anchors={}",
      to_string(c.loss), m.input_depth, m.hidden_channels, m.output_depth, to_string(m.pooling),
      m.gem_p_init, m.gem_shared_p, m.netvlad_clusters, m.netvlad_intra_norm, m.netvlad_alpha,
      c.learning_rate, c.momentum, c.epochs, c.batch_size, c.seed, c.contrastive.margin,
      c.contrastive.distance == PairDistance::kEuclidean ? "euclidean" : "squared",
      c.triplet.margin, c.arcface.scale, c.arcface.margin, c.mining.positive_radius,
      c.mining.negative_radius, c.mining.negatives_per_tuple,
      c.mining.class_mode == ClassMode::kCell ? "cell" : "binary", c.mining.class_cell, anchors);
  return fnv1a(text);
}

std::size_t TrainingData::items(LossKind loss) const {
  switch (loss) {
    case LossKind::kContrastive: return pairs.size();
    case LossKind::kTriplet: return tuples.tuples.size();
    case LossKind::kArcFace: return classes.labels.size();
  }
  return 0;
}

TrainingData prepare_training_data(const SequenceManifest& train_seq, const TrainConfig& cfg) {
  TrainingData data;
  const std::uint64_t seed = derive_seed(cfg.seed, 100);
  switch (cfg.loss) {
    case LossKind::kContrastive: data.pairs = mine_pairs(train_seq, cfg.mining, seed); break;
    case LossKind::kTriplet:
      data.tuples = mine_tuples(train_seq, cfg.mining, seed);
      if (data.tuples.tuples.empty()) {
        throw MiningError(fmt::format("sequence '{}': no training tuple could be mined",
                                      train_seq.name));
      }
      break;
    case LossKind::kArcFace: data.classes = assign_place_classes(train_seq, cfg.mining); break;
  }
  return data;
}

Checkpoint initialize_training(const TrainConfig& cfg, const SequenceManifest& train_seq,
                               const TrainingData& data) {
  cfg.validate();
  std::vector<const FeatureMap*> frames;
  frames.reserve(train_seq.size());
  for (std::size_t i = 0; i < train_seq.size(); ++i) frames.push_back(&train_seq.payload(i));

  Checkpoint ck;
  ck.model = init_model(cfg.model, cfg.seed, frames);
  if (cfg.loss == LossKind::kArcFace) {
    ck.model.arcface = init_arcface(cfg.model.descriptor_length(), data.classes.classes, cfg.seed);
  }
  ck.velocity = ck.model.zeros_like();
  ck.epoch = 0;
  ck.config_hash = config_hash(cfg);
  ck.rng_state = save_rng(Rng(derive_seed(cfg.seed, 200)));
  return ck;
}

namespace {

struct BatchResult {
  double loss_sum = 0.0;  // sum of per-item losses
};

void scale_into(Vector& into, std::span<const double> g, double scale) {
  for (std::size_t i = 0; i < into.size(); ++i) into[i] += scale * g[i];
}

BatchResult run_batch(const Model& model, const TrainConfig& cfg,
                      const SequenceManifest& seq, const TrainingData& data,
                      std::span<const std::size_t> items, Model& grads) {
  BatchResult out;
  const double inv = 1.0 / static_cast<double>(items.size());
  auto backward = [&](std::size_t frame, const DescriptorTrace& t, std::span<const double> g) {
    Vector scaled(g.begin(), g.end());
    for (double& v : scaled) v *= inv;
    describe_backward(model, seq.payload(frame), t, scaled, grads);
  };

  switch (cfg.loss) {
    case LossKind::kContrastive:
      for (std::size_t item : items) {
        const LabeledPair& pair = data.pairs[item];
        const auto ta = describe_trace(model, seq.payload(pair.a));
        const auto tb = describe_trace(model, seq.payload(pair.b));
        const PairLoss l = contrastive_loss(ta.descriptor.values, tb.descriptor.values,
                                            pair.matching, cfg.contrastive);
        out.loss_sum += l.loss;
        if (l.loss == 0.0) continue;
        backward(pair.a, ta, l.grad_a);
        backward(pair.b, tb, l.grad_b);
      }
      break;
    case LossKind::kTriplet:
      for (std::size_t item : items) {
        const TrainingTuple& tuple = data.tuples.tuples[item];
        const auto tq = describe_trace(model, seq.payload(tuple.query));
        const auto tp = describe_trace(model, seq.payload(tuple.positives.front()));
        std::vector<DescriptorTrace> tn;
        std::vector<Vector> negs;
        for (std::size_t n : tuple.negatives) {
          tn.push_back(describe_trace(model, seq.payload(n)));
          negs.push_back(tn.back().descriptor.values);
        }
        const TripletLoss l =
            triplet_loss(tq.descriptor.values, tp.descriptor.values, negs, cfg.triplet);
        out.loss_sum += l.loss;
        if (l.active == 0) continue;
        backward(tuple.query, tq, l.grad_query);
        backward(tuple.positives.front(), tp, l.grad_positive);
        for (std::size_t j = 0; j < tn.size(); ++j) {
          backward(tuple.negatives[j], tn[j], l.grad_negatives[j]);
        }
      }
      break;
    case LossKind::kArcFace: {
      std::vector<DescriptorTrace> traces;
      std::vector<Vector> features;
      std::vector<std::size_t> labels;
      for (std::size_t item : items) {
        traces.push_back(describe_trace(model, seq.payload(item)));
        features.push_back(traces.back().descriptor.values);
        labels.push_back(data.classes.labels[item]);
      }
      // arcface_loss already averages over the batch
      const ArcFaceLoss l = arcface_loss(features, labels, model.arcface, cfg.arcface);
      out.loss_sum = l.loss * static_cast<double>(items.size());
      for (std::size_t i = 0; i < items.size(); ++i) {
        describe_backward(model, seq.payload(items[i]), traces[i], l.grad_features[i], grads);
      }
      scale_into(grads.arcface.values, l.grad_weights, 1.0);
      break;
    }
  }
  return out;
}

}  // namespace

std::vector<double> train_epochs(Checkpoint& ck, const TrainConfig& cfg,
                                 const SequenceManifest& seq, const TrainingData& data,
                                 std::size_t max_epochs) {
  cfg.validate();
  if (ck.config_hash != config_hash(cfg)) {
    throw InvalidInput(fmt::format(
        "checkpoint config hash {:016x} does not match the training config {:016x}",
        ck.config_hash, config_hash(cfg)));
  }
  const std::size_t n_items = data.items(cfg.loss);
  if (n_items == 0) throw MiningError("training data has no items for the selected loss");

  Rng rng = load_rng(ck.rng_state);
  Model grads = ck.model.zeros_like();
  std::vector<double> losses;
  std::vector<std::size_t> order(n_items);
  while (ck.epoch < cfg.epochs && losses.size() < max_epochs) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order, rng);
    double epoch_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n_items; start += cfg.batch_size, ++batch_index) {
      const std::size_t stop = std::min(n_items, start + cfg.batch_size);
      const std::span<const std::size_t> items(order.data() + start, stop - start);
      grads.set_zero();
      BatchResult r;
      try {
        r = run_batch(ck.model, cfg, seq, data, items, grads);
      } catch (const InvalidInput& e) {
        // Inputs were valid on entry, so a non-finite activation here means
        // the parameters blew up.
        throw TrainingDivergence(fmt::format("epoch {} batch {} ({} items): {}", ck.epoch,
                                             batch_index, items.size(), e.what()));
      }
      if (!std::isfinite(r.loss_sum)) {
        throw TrainingDivergence(fmt::format("non-finite loss in epoch {} batch {} ({} items)",
                                             ck.epoch, batch_index, items.size()));
      }
      epoch_sum += r.loss_sum;
      sgd_step(ck.model, grads, ck.velocity, cfg.learning_rate, cfg.momentum);
      for (const auto& block : ck.model.blocks()) {
        if (!all_finite(*block.values)) {
          throw TrainingDivergence(fmt::format(
              "non-finite parameters in '{}' after epoch {} batch {} ({} items)", block.name,
              ck.epoch, batch_index, items.size()));
        }
      }
    }
    losses.push_back(epoch_sum / static_cast<double>(n_items));
    ++ck.epoch;
  }
  ck.rng_state = save_rng(rng);
  return losses;
}

TrainResult train(const TrainConfig& cfg, const SequenceManifest& train_seq) {
  const TrainingData data = prepare_training_data(train_seq, cfg);
  TrainResult result{initialize_training(cfg, train_seq, data), {}};
  result.epoch_losses = train_epochs(result.checkpoint, cfg, train_seq, data);
  return result;
}

}  // namespace vprb
