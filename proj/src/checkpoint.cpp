#include <bit>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "vprb/train.hpp"

namespace vprb {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'V', 'P', 'R', 'C'};

// Metadata travels as one-element float64 blocks so the file stays a plain
// list of named arrays.
constexpr std::string_view kMetaPooling = "meta.pooling_kind";
constexpr std::string_view kMetaIntraNorm = "meta.netvlad_intra_norm";
constexpr std::string_view kMetaAlpha = "meta.netvlad_alpha";
constexpr std::string_view kMetaGemInit = "meta.gem_p_init";

class Writer {
 public:
  void bytes(const void* data, std::size_t n) { out_.append(static_cast<const char*>(data), n); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void block(std::string_view name, const std::vector<std::size_t>& shape, const Vector& data) {
    str(name);
    u32(static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) u64(d);
    for (double v : data) f64(v);
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}
  void bytes(void* dst, std::size_t n) {
    if (pos_ + n > in_.size()) throw DataError("checkpoint: truncated file");
    std::copy_n(in_.data() + pos_, n, static_cast<char*>(dst));
    pos_ += n;
  }
  std::uint32_t u32() {
    unsigned char b[4];
    bytes(b, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    unsigned char b[8];
    bytes(b, 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::string& in_;
  std::size_t pos_ = 0;
};

struct RawBlock {
  std::vector<std::size_t> shape;
  Vector data;
};

void write_model(Writer& w, std::string_view prefix, const Model& m) {
  for (const auto& b : m.blocks()) w.block(fmt::format("{}/{}", prefix, b.name), b.shape, *b.values);
}

Model rebuild_model(const std::map<std::string, RawBlock>& blocks, std::string_view prefix,
                    PoolingKind pooling, const ModelConfig& meta) {
  auto get = [&](std::string_view name) -> const RawBlock& {
    const auto it = blocks.find(fmt::format("{}/{}", prefix, name));
    if (it == blocks.end()) {
      throw DataError(fmt::format("checkpoint: missing block '{}/{}'", prefix, name));
    }
    return it->second;
  };
  auto shape_is = [](const RawBlock& b, std::size_t rank) {
    if (b.shape.size() != rank) throw DataError("checkpoint: block has the wrong rank");
  };

  Model m;
  m.config = meta;
  m.config.pooling = pooling;
  const RawBlock& w1 = get("backbone.conv1.weight");
  const RawBlock& w2 = get("backbone.conv2.weight");
  shape_is(w1, 4);
  shape_is(w2, 4);
  m.backbone.conv1 = ConvLayer(w1.shape[1], w1.shape[0]);
  m.backbone.conv2 = ConvLayer(w2.shape[1], w2.shape[0]);
  m.backbone.conv1.weight = w1.data;
  m.backbone.conv1.bias = get("backbone.conv1.bias").data;
  m.backbone.conv2.weight = w2.data;
  m.backbone.conv2.bias = get("backbone.conv2.bias").data;
  m.config.input_depth = w1.shape[1];
  m.config.hidden_channels = w1.shape[0];
  m.config.output_depth = w2.shape[0];
  if (m.backbone.conv1.bias.size() != w1.shape[0] || m.backbone.conv2.bias.size() != w2.shape[0] ||
      w2.shape[1] != w1.shape[0]) {
    throw DataError("checkpoint: inconsistent backbone shapes");
  }

  if (pooling == PoolingKind::kGem) {
    m.gem.p = get("gem.p").data;
    m.config.gem_shared_p = m.gem.p.size() == 1;
  } else if (pooling == PoolingKind::kNetVlad) {
    const RawBlock& w = get("netvlad.weights");
    shape_is(w, 2);
    m.netvlad = NetVladParams(w.shape[0], w.shape[1]);
    m.netvlad.weights = w.data;
    m.netvlad.biases = get("netvlad.biases").data;
    m.netvlad.centroids = get("netvlad.centroids").data;
    m.netvlad.validate();
    m.config.netvlad_clusters = w.shape[0];
  }
  const auto arc = blocks.find(fmt::format("{}/arcface.weights", prefix));
  if (arc != blocks.end()) {
    shape_is(arc->second, 2);
    m.arcface = ArcFaceWeights(arc->second.shape[1], arc->second.shape[0]);
    m.arcface.values = arc->second.data;
  }
  return m;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ck) {
  const ModelConfig& cfg = ck.model.config;
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.u64(ck.epoch);
  const auto model_blocks = ck.model.blocks();
  const auto velocity_blocks = ck.velocity.blocks();
  w.u32(static_cast<std::uint32_t>(4 + model_blocks.size() + velocity_blocks.size()));
  w.block(kMetaPooling, {1}, {static_cast<double>(static_cast<int>(cfg.pooling))});
  w.block(kMetaIntraNorm, {1}, {cfg.netvlad_intra_norm ? 1.0 : 0.0});
  w.block(kMetaAlpha, {1}, {cfg.netvlad_alpha});
  w.block(kMetaGemInit, {1}, {cfg.gem_p_init});
  write_model(w, "model", ck.model);
  write_model(w, "velocity", ck.velocity);
  w.u64(ck.config_hash);
  w.str(ck.rng_state);
  return w.take();
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  char magic[4];
  r.bytes(magic, 4);
  if (!std::equal(magic, magic + 4, kMagic)) throw DataError("checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw DataError(fmt::format("checkpoint: unsupported format version {}", version));
  }
  Checkpoint ck;
  ck.epoch = r.u64();
  const std::uint32_t count = r.u32();
  std::map<std::string, RawBlock> blocks;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    RawBlock b;
    const std::uint32_t rank = r.u32();
    std::size_t total = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      b.shape.push_back(r.u64());
      total *= b.shape.back();
    }
    if (total > (std::size_t{1} << 32)) throw DataError("checkpoint: implausible block size");
    b.data.resize(total);
    for (double& v : b.data) v = r.f64();
    if (!blocks.emplace(name, std::move(b)).second) {
      throw DataError(fmt::format("checkpoint: duplicate block '{}'", name));
    }
  }
  ck.config_hash = r.u64();
  ck.rng_state = r.str();
  if (!r.done()) throw DataError("checkpoint: trailing bytes");

  auto meta = [&](std::string_view name) {
    const auto it = blocks.find(std::string(name));
    if (it == blocks.end() || it->second.data.size() != 1) {
      throw DataError(fmt::format("checkpoint: missing '{}'", name));
    }
    return it->second.data[0];
  };
  const int kind = static_cast<int>(meta(kMetaPooling));
  if (kind < 0 || kind > 3) throw DataError("checkpoint: unknown pooling kind");
  ModelConfig cfg;
  cfg.netvlad_intra_norm = meta(kMetaIntraNorm) != 0.0;
  cfg.netvlad_alpha = meta(kMetaAlpha);
  cfg.gem_p_init = meta(kMetaGemInit);
  const auto pooling = static_cast<PoolingKind>(kind);
  ck.model = rebuild_model(blocks, "model", pooling, cfg);
  ck.velocity = rebuild_model(blocks, "velocity", pooling, cfg);
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const fs::path& path) {
  const std::string bytes = serialize_checkpoint(ck);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write checkpoint '{}'", path.string()));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError(fmt::format("failed writing checkpoint '{}'", path.string()));
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open checkpoint '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return deserialize_checkpoint(ss.str());
  } catch (const DataError& e) {
    throw DataError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

}  // namespace vprb
