#include "vprb/retrieval.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace vprb {

std::vector<FrameDescriptor> extract_sequence(const SequenceManifest& seq, const Model& model,
                                              PoolingKind pooling) {
  if (model.config.pooling != pooling) {
    throw InvalidInput(fmt::format("checkpoint holds a {} head, {} was requested",
                                   to_string(model.config.pooling), to_string(pooling)));
  }
  std::vector<FrameDescriptor> out;
  out.reserve(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const FeatureMap& payload = seq.payload(i);
    if (payload.depth() != model.backbone.input_depth()) {
      throw InvalidInput(fmt::format("frame '{}': payload depth {} but the checkpoint expects {}",
                                     seq.frames[i].frame_id, payload.depth(),
                                     model.backbone.input_depth()));
    }
    out.push_back({seq.frames[i].frame_id, describe(model, payload)});
  }
  return out;
}

DescriptorIndex build_index(const std::vector<FrameDescriptor>& descriptors) {
  if (descriptors.empty()) throw InvalidInput("build_index: no descriptors");
  DescriptorIndex index;
  index.length_ = descriptors.front().values.size();
  if (index.length_ == 0) throw InvalidInput("build_index: zero-length descriptor");
  index.rows_.reserve(descriptors.size() * index.length_);
  index.frame_ids_.reserve(descriptors.size());
  for (const auto& d : descriptors) {
    if (d.values.size() != index.length_) {
      throw DimensionError(fmt::format("build_index: '{}' has length {}, expected {}", d.frame_id,
                                       d.values.size(), index.length_));
    }
    if (std::abs(l2_norm(d.values) - 1.0) > 1e-6) {
      throw InvalidInput(fmt::format("build_index: '{}' is not unit norm", d.frame_id));
    }
    index.rows_.insert(index.rows_.end(), d.values.begin(), d.values.end());
    index.frame_ids_.push_back(d.frame_id);
  }
  return index;
}

std::vector<Neighbor> query_topn(const DescriptorIndex& index, std::span<const double> query,
                                 std::size_t n) {
  if (query.size() != index.length()) {
    throw DimensionError(fmt::format("query length {} vs index length {}", query.size(),
                                     index.length()));
  }
  if (n == 0) throw InvalidInput("query_topn: N must be >= 1");
  std::vector<Neighbor> all(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) all[i] = {i, l2_distance(index.row(i), query)};
  const auto closer = [](const Neighbor& a, const Neighbor& b) {
    return a.distance < b.distance || (a.distance == b.distance && a.row < b.row);
  };
  const std::size_t keep = std::min(n, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(),
                    closer);
  all.resize(keep);
  return all;
}

MatchReport evaluate_fcm(const SequenceManifest& test, const SequenceManifest& reference,
                         const DescriptorIndex& index,
                         const std::vector<FrameDescriptor>& query_descriptors,
                         const std::vector<double>& taus, std::size_t top_n) {
  if (test.frames.empty()) throw DataError(fmt::format("test sequence '{}' is empty", test.name));
  if (taus.empty()) throw InvalidInput("evaluate_fcm: empty threshold list");
  for (double t : taus) {
    if (!(t > 0.0) || !std::isfinite(t)) throw InvalidInput("evaluate_fcm: thresholds must be > 0");
  }
  if (query_descriptors.size() != test.size()) {
    throw DimensionError("evaluate_fcm: one descriptor per test frame is required");
  }
  if (index.size() != reference.size()) {
    throw DimensionError("evaluate_fcm: index rows do not match the reference sequence");
  }
  for (std::size_t i = 0; i < reference.size(); ++i) {
    if (index.frame_ids()[i] != reference.frames[i].frame_id) {
      throw InvalidInput(fmt::format("evaluate_fcm: index row {} is '{}', reference has '{}'", i,
                                     index.frame_ids()[i], reference.frames[i].frame_id));
    }
  }

  MatchReport report;
  report.test_name = test.name;
  report.reference_name = reference.name;
  report.taus = taus;
  report.n_queries = test.size();
  report.top_n = top_n;
  std::vector<std::size_t> correct(taus.size(), 0);
  for (std::size_t q = 0; q < test.size(); ++q) {
    const Pose& pose = test.frames[q].pose;
    QueryResult result{test.frames[q].frame_id, {}};
    for (const Neighbor& nb : query_topn(index, query_descriptors[q].values, top_n)) {
      result.ranked.push_back({index.frame_ids()[nb.row], nb.distance,
                               geo_distance(pose, reference.frames[nb.row].pose)});
    }
    const double top1_error = result.ranked.front().geo_error;
    for (std::size_t t = 0; t < taus.size(); ++t) {
      if (top1_error <= taus[t]) ++correct[t];
    }
    report.queries.push_back(std::move(result));
  }
  for (std::size_t c : correct) {
    report.fcm.push_back(static_cast<double>(c) * 100.0 / static_cast<double>(test.size()));
  }
  return report;
}

MatchReport evaluate_fcm(const SequenceManifest& test, const SequenceManifest& reference,
                         const DescriptorIndex& index, const Model& model,
                         const std::vector<double>& taus, std::size_t top_n) {
  return evaluate_fcm(test, reference, index, extract_sequence(test, model, model.config.pooling),
                      taus, top_n);
}

}  // namespace vprb
