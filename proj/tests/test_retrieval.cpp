#include <gtest/gtest.h>

#include "oracles.hpp"
#include "vprb/model.hpp"
#include "vprb/retrieval.hpp"

using namespace vprb;

namespace {

std::vector<FrameDescriptor> random_unit_rows(std::mt19937_64& rng, std::size_t n, std::size_t d) {
  std::vector<FrameDescriptor> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({"r" + std::to_string(i), oracle::normalized(oracle::random_vector(rng, d, -1, 1))});
  }
  return out;
}

SequenceManifest line_sequence(const std::string& name, const std::vector<double>& xs) {
  SequenceManifest seq;
  seq.name = name;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    PosedFrame f;
    f.frame_id = name + std::to_string(i);
    f.pose = {xs[i], 0.0, 0.0, static_cast<double>(i)};
    seq.frames.push_back(f);
  }
  return seq;
}

Model untrained(PoolingKind pooling, const SequenceManifest& sample, std::uint64_t seed) {
  ModelConfig mc;
  mc.pooling = pooling;
  mc.input_depth = sample.payload(0).depth();
  std::vector<const FeatureMap*> frames;
  for (std::size_t i = 0; i < sample.size(); ++i) frames.push_back(&sample.payload(i));
  return init_model(mc, seed, frames);
}

}  // namespace

TEST(Index, SingleRow) {
  const auto idx = build_index({{"a", {0.6, 0.8}}});
  EXPECT_EQ(idx.size(), 1u);
  EXPECT_EQ(idx.length(), 2u);
}

TEST(Index, Errors) {
  EXPECT_THROW(build_index({}), InvalidInput);
  EXPECT_THROW(build_index({{"a", {1.0, 0.0}}, {"b", {1.0}}}), DimensionError);
  EXPECT_THROW(build_index({{"a", {2.0, 0.0}}}), InvalidInput);
}

TEST(Index, LargeIndexKeepsOrder) {
  std::mt19937_64 rng(8);
  const auto rows = random_unit_rows(rng, 10000, 2048);
  const auto idx = build_index(rows);
  ASSERT_EQ(idx.size(), 10000u);
  for (std::size_t i = 0; i < rows.size(); i += 997) {
    EXPECT_EQ(idx.frame_ids()[i], rows[i].frame_id);
    EXPECT_EQ(Vector(idx.row(i).begin(), idx.row(i).end()), rows[i].values);
  }
}

TEST(TopN, ExactRowComesFirst) {
  std::mt19937_64 rng(1);
  const auto rows = random_unit_rows(rng, 30, 8);
  const auto idx = build_index(rows);
  const auto hits = query_topn(idx, rows[17].values, 3);
  ASSERT_EQ(hits.size(), 3u);
  EXPECT_EQ(hits[0].row, 17u);
  EXPECT_EQ(hits[0].distance, 0.0);
}

TEST(TopN, LargeNGivesFullRanking) {
  std::mt19937_64 rng(2);
  const auto rows = random_unit_rows(rng, 12, 4);
  const auto idx = build_index(rows);
  const Vector q = oracle::normalized(oracle::random_vector(rng, 4, -1, 1));
  EXPECT_EQ(query_topn(idx, q, 100).size(), 12u);
}

TEST(TopN, MatchesFullSortOracle) {
  auto& rng = oracle::test_rng();
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 1 + static_cast<std::size_t>(oracle::uniform(rng, 0, 200));
    const std::size_t d = 1 + static_cast<std::size_t>(oracle::uniform(rng, 0, 16));
    const auto rows = random_unit_rows(rng, n, d);
    const auto idx = build_index(rows);
    std::vector<Vector> plain;
    for (const auto& r : rows) plain.push_back(r.values);
    const Vector q = oracle::normalized(oracle::random_vector(rng, d, -1, 1));
    const std::size_t top = 1 + t % 10;
    const auto expected = oracle::full_sort_ranking(plain, q);
    const auto got = query_topn(idx, q, top);
    ASSERT_EQ(got.size(), std::min(top, n));
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_EQ(got[i].row, expected[i]);
      EXPECT_NEAR(got[i].distance, l2_distance(plain[expected[i]], q), 1e-12);
    }
  }
}

TEST(TopN, TiesGoToEarlierRow) {
  const auto idx = build_index({{"a", {1, 0}}, {"b", {0, 1}}, {"c", {1, 0}}});
  const auto hits = query_topn(idx, Vector{1, 0}, 2);
  EXPECT_EQ(hits[0].row, 0u);
  EXPECT_EQ(hits[1].row, 2u);
}

TEST(TopN, LengthMismatch) {
  const auto idx = build_index({{"a", {1, 0}}});
  EXPECT_THROW(query_topn(idx, Vector{1, 0, 0}, 1), DimensionError);
}

TEST(TopN, RankInvariantToPreNormalizationScale) {
  auto& rng = oracle::test_rng();
  std::vector<FrameDescriptor> raw, scaled;
  for (int i = 0; i < 50; ++i) {
    const Vector v = oracle::random_vector(rng, 6, -1, 1);
    Vector s = v;
    for (double& x : s) x *= 37.5;
    raw.push_back({"r" + std::to_string(i), l2_normalize(v).values});
    scaled.push_back({"r" + std::to_string(i), l2_normalize(s).values});
  }
  const auto a = build_index(raw), b = build_index(scaled);
  for (int t = 0; t < 20; ++t) {
    const Vector q = oracle::normalized(oracle::random_vector(rng, 6, -1, 1));
    const auto ha = query_topn(a, q, 50), hb = query_topn(b, q, 50);
    for (std::size_t i = 0; i < ha.size(); ++i) EXPECT_EQ(ha[i].row, hb[i].row);
  }
}

TEST(Fcm, SevenOfTen) {
  // Reference frames every 10 m; queries point at a descriptor row chosen so
  // that exactly 7 of 10 land within 5 m.
  std::vector<double> xs;
  for (int i = 0; i < 10; ++i) xs.push_back(10.0 * i);
  const auto ref = line_sequence("ref", xs);
  const auto test = line_sequence("q", xs);
  std::vector<FrameDescriptor> rows;
  for (int i = 0; i < 10; ++i) {
    Vector e(10, 0.0);
    e[static_cast<std::size_t>(i)] = 1.0;
    rows.push_back({ref.frames[static_cast<std::size_t>(i)].frame_id, e});
  }
  std::vector<FrameDescriptor> queries;
  for (int i = 0; i < 10; ++i) {
    const std::size_t target = i < 7 ? static_cast<std::size_t>(i) : static_cast<std::size_t>((i + 3) % 10);
    queries.push_back({test.frames[static_cast<std::size_t>(i)].frame_id, rows[target].values});
  }
  const auto report = evaluate_fcm(test, ref, build_index(rows), queries, {5.0});
  EXPECT_EQ(report.fcm, std::vector<double>{70.0});
  EXPECT_EQ(report.n_queries, 10u);
}

TEST(Fcm, SelfRetrievalIsPerfect) {
  const auto ds = synth_dataset(3, {});
  for (PoolingKind pooling : {PoolingKind::kMac, PoolingKind::kGem, PoolingKind::kNetVlad}) {
    const Model model = untrained(pooling, ds.train, 5);
    const auto idx = build_index(extract_sequence(ds.reference, model, pooling));
    const auto report = evaluate_fcm(ds.reference, ds.reference, idx, model, {25, 10, 5, 2, 0.5});
    for (double f : report.fcm) EXPECT_EQ(f, 100.0);
  }
}

TEST(Fcm, NoiseFreeSyntheticIsPerfectAtFrameSpacing) {
  SynthSpec spec;
  spec.condition_noise = 0;
  spec.style_offset = 0;
  const auto ds = synth_dataset(6, spec);
  const Model model = untrained(PoolingKind::kGem, ds.train, 2);
  const auto idx = build_index(extract_sequence(ds.reference, model, PoolingKind::kGem));
  for (const auto* test : ds.tests()) {
    const auto report = evaluate_fcm(*test, ds.reference, idx, model, {spec.frame_spacing});
    EXPECT_EQ(report.fcm[0], 100.0);
  }
}

TEST(Fcm, MatchesBruteForceOracle) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    SynthSpec spec;
    spec.style_offset = 0.5 * static_cast<double>(seed % 5);
    spec.condition_noise = 0.05 * static_cast<double>(seed % 4);
    const auto ds = synth_dataset(seed, spec);
    const PoolingKind pooling = static_cast<PoolingKind>(seed % 4);
    const Model model = untrained(pooling, ds.train, seed);
    const auto refs = extract_sequence(ds.reference, model, pooling);
    const auto idx = build_index(refs);
    const std::vector<double> taus{50, 25, 10, 5, 4, 2, 1};

    std::vector<Vector> ref_desc;
    std::vector<oracle::Pose3> ref_pose;
    for (std::size_t i = 0; i < refs.size(); ++i) {
      ref_desc.push_back(refs[i].values);
      const auto& p = ds.reference.frames[i].pose;
      ref_pose.push_back({p.x, p.y, p.z});
    }
    for (const auto* test : ds.tests()) {
      const auto report = evaluate_fcm(*test, ds.reference, idx, model, taus, 3);
      std::vector<Vector> q_desc;
      std::vector<oracle::Pose3> q_pose;
      for (std::size_t i = 0; i < test->size(); ++i) {
        q_desc.push_back(describe(model, test->payload(i)));
        const auto& p = test->frames[i].pose;
        q_pose.push_back({p.x, p.y, p.z});
      }
      EXPECT_EQ(report.fcm, oracle::brute_force_fcm(q_desc, q_pose, ref_desc, ref_pose, taus))
          << "seed " << seed;
      for (std::size_t t = 1; t < taus.size(); ++t) EXPECT_LE(report.fcm[t], report.fcm[t - 1]);
      EXPECT_EQ(report.queries.size(), test->size());
      EXPECT_EQ(report.queries.front().ranked.size(), 3u);
    }
  }
}

TEST(Fcm, Errors) {
  const auto ref = line_sequence("ref", {0, 10});
  const auto idx = build_index({{"ref0", {1, 0}}, {"ref1", {0, 1}}});
  SequenceManifest empty;
  empty.name = "empty";
  EXPECT_THROW(evaluate_fcm(empty, ref, idx, std::vector<FrameDescriptor>{}, {5}), Error);
  const auto wrong = build_index({{"x", {1, 0}}, {"y", {0, 1}}});
  const auto test = line_sequence("q", {0});
  EXPECT_THROW(evaluate_fcm(test, ref, wrong, {{"q0", {1, 0}}}, {5}), Error);
}

TEST(Extract, DuplicateFramesGiveIdenticalDescriptors) {
  auto ds = synth_dataset(3, {});
  ds.reference.frames[1].payload = ds.reference.frames[0].payload;
  const Model model = untrained(PoolingKind::kNetVlad, ds.train, 1);
  const auto d = extract_sequence(ds.reference, model, PoolingKind::kNetVlad);
  EXPECT_EQ(d[0].values, d[1].values);
  EXPECT_EQ(d[0].frame_id, ds.reference.frames[0].frame_id);
}

TEST(Extract, PoolingMismatch) {
  const auto ds = synth_dataset(3, {});
  const Model model = untrained(PoolingKind::kGem, ds.train, 1);
  EXPECT_THROW(extract_sequence(ds.reference, model, PoolingKind::kMac), InvalidInput);
}

TEST(Extract, LargeDescriptorLengths) {
  std::mt19937_64 rng(4);
  SequenceManifest seq = line_sequence("s", {0, 1, 2, 3});
  for (auto& f : seq.frames) {
    f.payload = std::make_shared<const FeatureMap>(oracle::random_map(rng, 4, 4, 4, 0, 1));
  }
  std::vector<const FeatureMap*> frames;
  for (std::size_t i = 0; i < seq.size(); ++i) frames.push_back(&seq.payload(i));

  ModelConfig vlad;
  vlad.input_depth = 4;
  vlad.hidden_channels = 8;
  vlad.output_depth = 512;
  vlad.pooling = PoolingKind::kNetVlad;
  vlad.netvlad_clusters = 64;
  const auto dv = extract_sequence(seq, init_model(vlad, 1, frames), PoolingKind::kNetVlad);
  EXPECT_EQ(dv[0].values.size(), 32768u);

  ModelConfig gem = vlad;
  gem.output_depth = 2048;
  gem.pooling = PoolingKind::kGem;
  const auto dg = extract_sequence(seq, init_model(gem, 1, frames), PoolingKind::kGem);
  EXPECT_EQ(dg[0].values.size(), 2048u);
  EXPECT_NEAR(l2_norm(dg[0].values), 1.0, 1e-9);
}
