#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "temp_dir.hpp"
#include "vprb/backbone.hpp"
#include "vprb/model.hpp"
#include "vprb/train.hpp"

using namespace vprb;

namespace {

ToyBackbone random_backbone(std::size_t in, std::size_t hidden, std::size_t out, std::uint64_t seed) {
  Rng rng(seed);
  ToyBackbone net = ToyBackbone::he_init(in, hidden, out, rng);
  for (double& b : net.conv1.bias) b = uniform(rng, -0.2, 0.2);
  for (double& b : net.conv2.bias) b = uniform(rng, -0.2, 0.2);
  return net;
}

FeatureMap relu(FeatureMap m) {
  for (double& x : m.values()) x = std::max(0.0, x);
  return m;
}

SynthSpec small_spec() {
  SynthSpec spec;
  spec.route_length = 120;
  spec.frame_spacing = 4;
  spec.map_height = 4;
  spec.map_width = 4;
  spec.condition_noise = 0.1;
  spec.style_offset = 2.0;
  return spec;
}

TrainConfig small_config(PoolingKind pooling, LossKind loss) {
  TrainConfig cfg;
  cfg.loss = loss;
  cfg.model.pooling = pooling;
  cfg.model.input_depth = 8;
  cfg.model.hidden_channels = 8;
  cfg.model.output_depth = 8;
  cfg.model.netvlad_alpha = 1.0;
  cfg.learning_rate = loss == LossKind::kArcFace ? 0.001 : 0.003;
  cfg.epochs = 6;
  return cfg;
}

}  // namespace

TEST(Conv, MatchesDirectSum) {
  auto& rng = oracle::test_rng();
  for (int t = 0; t < 10; ++t) {
    ConvLayer layer(3, 4);
    layer.weight = oracle::random_vector(rng, layer.weight.size(), -1, 1);
    layer.bias = oracle::random_vector(rng, 4, -1, 1);
    const FeatureMap in = oracle::random_map(rng, 1 + t % 4, 2 + t % 3, 3, -1, 1);
    const FeatureMap got = conv3x3_forward(in, layer);
    EXPECT_LT(oracle::max_abs_diff(got.values(),
                                   oracle::naive_conv3x3(in, layer.weight, layer.bias, 4).values()),
              1e-12);
  }
}

TEST(Backbone, MatchesDirectSumWithRelu) {
  auto& rng = oracle::test_rng();
  const ToyBackbone net = random_backbone(2, 5, 3, 4);
  const FeatureMap in = oracle::random_map(rng, 4, 3, 2, -1, 1);
  const FeatureMap h = relu(oracle::naive_conv3x3(in, net.conv1.weight, net.conv1.bias, 5));
  const FeatureMap out = relu(oracle::naive_conv3x3(h, net.conv2.weight, net.conv2.bias, 3));
  EXPECT_LT(oracle::max_abs_diff(backbone_forward(in, net).values(), out.values()), 1e-10);
}

TEST(Backbone, ZeroInputZeroOutput) {
  Rng rng(1);
  const ToyBackbone net = ToyBackbone::he_init(3, 16, 4, rng);
  const FeatureMap out = backbone_forward(FeatureMap(5, 5, 3), net);
  for (double x : out.values()) EXPECT_EQ(x, 0.0);
}

TEST(Backbone, IdentityNetPassesDelta) {
  ToyBackbone net{ConvLayer(1, 1), ConvLayer(1, 1)};
  net.conv1.weight[net.conv1.widx(0, 0, 1, 1)] = 1.0;
  net.conv2.weight[net.conv2.widx(0, 0, 1, 1)] = 1.0;
  FeatureMap delta(5, 5, 1);
  delta.at(2, 2, 0) = 1.0;
  EXPECT_EQ(backbone_forward(delta, net), delta);
}

TEST(Backbone, ZeroGradOutGivesZeroGradients) {
  auto& rng = oracle::test_rng();
  const ToyBackbone net = random_backbone(2, 3, 2, 5);
  const FeatureMap in = oracle::random_map(rng, 3, 3, 2, -1, 1);
  const auto g = backbone_backward(net, in, FeatureMap(3, 3, 2));
  for (double x : g.grad_input.values()) EXPECT_EQ(x, 0.0);
  for (double x : g.grad.conv1.weight) EXPECT_EQ(x, 0.0);
  for (double x : g.grad.conv2.bias) EXPECT_EQ(x, 0.0);
}

TEST(Backbone, DeadReluBlocksGradient) {
  ToyBackbone net{ConvLayer(1, 1), ConvLayer(1, 1)};
  net.conv1.weight[net.conv1.widx(0, 0, 1, 1)] = 1.0;
  net.conv2.weight[net.conv2.widx(0, 0, 1, 1)] = 1.0;
  net.conv2.bias[0] = -100.0;  // output unit never fires
  const FeatureMap in(2, 2, 1, {0.5, 1.0, 1.5, 2.0});
  const auto g = backbone_backward(net, in, FeatureMap(2, 2, 1, Vector(4, 1.0)));
  for (double x : g.grad_input.values()) EXPECT_EQ(x, 0.0);
  for (double x : g.grad.conv1.weight) EXPECT_EQ(x, 0.0);
  for (double x : g.grad.conv2.weight) EXPECT_EQ(x, 0.0);
}

TEST(Backbone, BackwardMatchesFiniteDifferences) {
  auto& rng = oracle::test_rng();
  for (int t = 0; t < 5; ++t) {
    const ToyBackbone net = random_backbone(2, 3, 2, 100 + static_cast<std::uint64_t>(t));
    const FeatureMap in = oracle::random_map(rng, 3, 3, 2, -1, 1);
    const FeatureMap w = oracle::random_map(rng, 3, 3, 2, -1, 1);
    const auto trace = backbone_trace(in, net);
    bool kink = false;
    for (const FeatureMap* pre : {&trace.pre1, &trace.pre2}) {
      for (double x : pre->values()) kink |= std::abs(x) < 1e-3;
    }
    if (kink) continue;
    const auto g = backbone_backward(net, in, w);
    auto f_in = [&](const Vector& x) {
      return dot(backbone_forward(FeatureMap(3, 3, 2, x), net).values(), w.values());
    };
    EXPECT_LT(oracle::max_rel_error(g.grad_input.values(), oracle::numeric_gradient(f_in, in.values())),
              1e-5);
    auto f_w1 = [&](const Vector& x) {
      ToyBackbone n = net;
      n.conv1.weight = x;
      return dot(backbone_forward(in, n).values(), w.values());
    };
    EXPECT_LT(oracle::max_rel_error(g.grad.conv1.weight,
                                    oracle::numeric_gradient(f_w1, net.conv1.weight)),
              1e-5);
    auto f_b2 = [&](const Vector& x) {
      ToyBackbone n = net;
      n.conv2.bias = x;
      return dot(backbone_forward(in, n).values(), w.values());
    };
    EXPECT_LT(oracle::max_rel_error(g.grad.conv2.bias, oracle::numeric_gradient(f_b2, net.conv2.bias)),
              1e-5);
  }
}

TEST(Sgd, Examples) {
  Vector theta{0.5, -1.0}, v{0.0, 0.0};
  sgd_update(theta, Vector{0.0, 0.0}, v, 0.1, 0.9);
  EXPECT_EQ(theta, (Vector{0.5, -1.0}));

  Vector t{0.0}, vel{0.0};
  sgd_update(t, Vector{1.0}, vel, 0.1, 0.0);
  EXPECT_DOUBLE_EQ(t[0], -0.1);
}

TEST(Sgd, MomentumAccumulates) {
  Vector t{0.0}, vel{0.0};
  sgd_update(t, Vector{1.0}, vel, 0.1, 0.5);
  sgd_update(t, Vector{1.0}, vel, 0.1, 0.5);
  EXPECT_DOUBLE_EQ(vel[0], -0.15);
  EXPECT_DOUBLE_EQ(t[0], -0.25);
}

TEST(Sgd, ProjectionsAfterStep) {
  ModelConfig mc;
  mc.pooling = PoolingKind::kGem;
  Model model = init_model(mc, 3, {});
  model.arcface = init_arcface(mc.output_depth, 3, 4);
  Model grads = model.zeros_like();
  Model velocity = model.zeros_like();
  grads.gem.p.assign(grads.gem.p.size(), 100.0);  // drives p far below 1
  for (double& x : grads.arcface.values) x = 0.3;
  sgd_step(model, grads, velocity, 0.1, 0.0);
  for (double p : model.gem.p) EXPECT_EQ(p, 1.0);
  for (std::size_t j = 0; j < model.arcface.classes; ++j) {
    EXPECT_NEAR(l2_norm(model.arcface.column(j)), 1.0, 1e-6);
  }
}

TEST(Train, ZeroLearningRateKeepsParameters) {
  const auto ds = synth_dataset(2, small_spec());
  for (LossKind loss : {LossKind::kContrastive, LossKind::kTriplet, LossKind::kArcFace}) {
    TrainConfig cfg = small_config(PoolingKind::kNetVlad, loss);
    cfg.learning_rate = 0.0;
    cfg.epochs = 2;
    const TrainingData data = prepare_training_data(ds.train, cfg);
    const Checkpoint start = initialize_training(cfg, ds.train, data);
    const TrainResult r = train(cfg, ds.train);
    const auto a = start.model.blocks();
    const auto b = r.checkpoint.model.blocks();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i].values, *b[i].values) << a[i].name;
  }
}

TEST(Train, DeterministicTraces) {
  const auto ds = synth_dataset(2, small_spec());
  const TrainConfig cfg = small_config(PoolingKind::kGem, LossKind::kTriplet);
  const auto a = train(cfg, ds.train);
  const auto b = train(cfg, ds.train);
  EXPECT_EQ(a.epoch_losses, b.epoch_losses);
  EXPECT_EQ(serialize_checkpoint(a.checkpoint), serialize_checkpoint(b.checkpoint));
}

// All 12 pooling x loss cells on two backbone sizes.
TEST(Train, LossDecreasesEveryCell) {
  const auto ds = synth_dataset(7, small_spec());
  for (std::size_t width : {8u, 16u}) {
    for (PoolingKind pooling :
         {PoolingKind::kMac, PoolingKind::kSpoc, PoolingKind::kGem, PoolingKind::kNetVlad}) {
      for (LossKind loss : {LossKind::kContrastive, LossKind::kTriplet, LossKind::kArcFace}) {
        TrainConfig cfg = small_config(pooling, loss);
        cfg.model.hidden_channels = width;
        cfg.model.output_depth = width;
        cfg.epochs = 20;
        const auto r = train(cfg, ds.train);
        ASSERT_EQ(r.epoch_losses.size(), 20u);
        EXPECT_LT(r.epoch_losses.back(), r.epoch_losses.front())
            << to_string(pooling) << "/" << to_string(loss) << " width " << width;
        for (double p : r.checkpoint.model.gem.p) {
          EXPECT_GE(p, kGemMinP);
          EXPECT_LE(p, kGemMaxP);
        }
      }
    }
  }
}

TEST(Train, DivergenceNamesTheBatch) {
  const auto ds = synth_dataset(2, small_spec());
  TrainConfig cfg = small_config(PoolingKind::kSpoc, LossKind::kContrastive);
  cfg.learning_rate = 1e300;
  try {
    train(cfg, ds.train);
    FAIL() << "expected divergence";
  } catch (const TrainingDivergence& e) {
    EXPECT_NE(std::string(e.what()).find("batch"), std::string::npos) << e.what();
  }
}

TEST(Train, InvalidConfig) {
  const auto ds = synth_dataset(2, small_spec());
  TrainConfig cfg = small_config(PoolingKind::kGem, LossKind::kTriplet);
  cfg.momentum = 1.0;
  EXPECT_THROW(train(cfg, ds.train), InvalidInput);
  cfg = small_config(PoolingKind::kGem, LossKind::kTriplet);
  cfg.learning_rate = -1;
  EXPECT_THROW(train(cfg, ds.train), InvalidInput);
}

TEST(ConfigHash, SensitiveToEveryKnob) {
  const TrainConfig base = small_config(PoolingKind::kGem, LossKind::kTriplet);
  TrainConfig a = base;
  a.learning_rate *= 2;
  TrainConfig b = base;
  b.model.pooling = PoolingKind::kMac;
  TrainConfig c = base;
  c.mining.positive_radius = 6.0;
  EXPECT_EQ(config_hash(base), config_hash(small_config(PoolingKind::kGem, LossKind::kTriplet)));
  EXPECT_NE(config_hash(base), config_hash(a));
  EXPECT_NE(config_hash(base), config_hash(b));
  EXPECT_NE(config_hash(base), config_hash(c));
}

TEST(Checkpoint, ResumeEqualsUninterrupted) {
  const auto ds = synth_dataset(5, small_spec());
  for (PoolingKind pooling : {PoolingKind::kGem, PoolingKind::kNetVlad}) {
    for (LossKind loss : {LossKind::kContrastive, LossKind::kTriplet, LossKind::kArcFace}) {
      const TrainConfig cfg = small_config(pooling, loss);
      const TrainResult full = train(cfg, ds.train);

      TempDir dir;
      const TrainingData data = prepare_training_data(ds.train, cfg);
      Checkpoint ck = initialize_training(cfg, ds.train, data);
      auto losses = train_epochs(ck, cfg, ds.train, data, 2);
      save_checkpoint(ck, dir / "mid.vprc");
      Checkpoint resumed = load_checkpoint(dir / "mid.vprc");
      EXPECT_EQ(resumed.epoch, 2u);
      const auto rest = train_epochs(resumed, cfg, ds.train, data);
      losses.insert(losses.end(), rest.begin(), rest.end());

      EXPECT_EQ(losses, full.epoch_losses);
      EXPECT_EQ(serialize_checkpoint(resumed), serialize_checkpoint(full.checkpoint));
    }
  }
}

TEST(Checkpoint, RoundTripIsExact) {
  const auto ds = synth_dataset(5, small_spec());
  const auto r = train(small_config(PoolingKind::kNetVlad, LossKind::kArcFace), ds.train);
  const std::string bytes = serialize_checkpoint(r.checkpoint);
  EXPECT_EQ(serialize_checkpoint(deserialize_checkpoint(bytes)), bytes);
}

TEST(Checkpoint, RejectsBadFiles) {
  const auto ds = synth_dataset(5, small_spec());
  TrainConfig cfg = small_config(PoolingKind::kGem, LossKind::kTriplet);
  cfg.epochs = 1;
  const auto r = train(cfg, ds.train);
  std::string bytes = serialize_checkpoint(r.checkpoint);

  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() / 2)), DataError);
  std::string versioned = bytes;
  versioned[4] = static_cast<char>(kCheckpointVersion + 1);
  EXPECT_THROW(deserialize_checkpoint(versioned), DataError);
  std::string magic = bytes;
  magic[0] = 'Z';
  EXPECT_THROW(deserialize_checkpoint(magic), DataError);
  EXPECT_THROW(deserialize_checkpoint(bytes + "x"), DataError);

  // Resuming under a different config is refused.
  Checkpoint ck = deserialize_checkpoint(bytes);
  TrainConfig other = cfg;
  other.epochs = 3;
  other.learning_rate = 0.5;
  const TrainingData data = prepare_training_data(ds.train, other);
  EXPECT_THROW(train_epochs(ck, other, ds.train, data), InvalidInput);
}
