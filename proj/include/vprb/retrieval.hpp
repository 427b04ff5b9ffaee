#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vprb/core.hpp"
#include "vprb/data.hpp"
#include "vprb/model.hpp"

namespace vprb {

struct FrameDescriptor {
  std::string frame_id;
  Vector values;
};

/// backbone -> pooling -> L2 for every frame, in manifest order. Throws
/// InvalidInput when the model was built for a different pooling kind or
/// payload depth.
std::vector<FrameDescriptor> extract_sequence(const SequenceManifest& seq, const Model& model,
                                              PoolingKind pooling);

/// Reference descriptors stored row after row in one buffer.
class DescriptorIndex {
 public:
  std::size_t size() const { return frame_ids_.size(); }
  std::size_t length() const { return length_; }
  const std::vector<std::string>& frame_ids() const { return frame_ids_; }
  std::span<const double> row(std::size_t i) const { return {rows_.data() + i * length_, length_}; }

  friend DescriptorIndex build_index(const std::vector<FrameDescriptor>& descriptors);

 private:
  std::size_t length_ = 0;
  std::vector<std::string> frame_ids_;
  Vector rows_;
};

/// Throws on an empty list, mixed lengths, or a row that is not unit norm
/// within 1e-6.
DescriptorIndex build_index(const std::vector<FrameDescriptor>& descriptors);

struct Neighbor {
  std::size_t row = 0;
  double distance = 0.0;
};

/// Exact search: the n rows with the smallest L2 distance, ascending, ties to
/// the earlier row.
std::vector<Neighbor> query_topn(const DescriptorIndex& index, std::span<const double> query,
                                 std::size_t n);

struct RankedMatch {
  std::string frame_id;
  double distance = 0.0;
  double geo_error = 0.0;  // meters between query and match poses
};

struct QueryResult {
  std::string query_id;
  std::vector<RankedMatch> ranked;  // front() is the top-1 match used for FCM
};

struct MatchReport {
  std::string method;
  std::string backbone;
  std::string loss;
  std::string test_name;
  std::string reference_name;
  std::vector<double> taus;  // meters
  std::vector<double> fcm;   // percent, aligned with taus
  std::size_t n_queries = 0;
  std::size_t top_n = 1;
  std::string matching = "top-1";
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::vector<QueryResult> queries;
};

/// FCM = 100 * (queries whose top-1 match lies within tau) / (queries).
/// `index` rows must be the reference frames in manifest order.
MatchReport evaluate_fcm(const SequenceManifest& test, const SequenceManifest& reference,
                         const DescriptorIndex& index,
                         const std::vector<FrameDescriptor>& query_descriptors,
                         const std::vector<double>& taus, std::size_t top_n = 1);

MatchReport evaluate_fcm(const SequenceManifest& test, const SequenceManifest& reference,
                         const DescriptorIndex& index, const Model& model,
                         const std::vector<double>& taus, std::size_t top_n = 1);

}  // namespace vprb
