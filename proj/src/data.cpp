#include "vprb/data.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "vprb/random.hpp"

namespace vprb {

namespace fs = std::filesystem;

std::string_view to_string(SequenceRole role) {
  switch (role) {
    case SequenceRole::kTrain: return "train";
    case SequenceRole::kReference: return "reference";
    case SequenceRole::kTest: return "test";
  }
  return "unknown";
}

void SequenceManifest::validate() const {
  if (frames.empty()) throw DataError(fmt::format("sequence '{}' has no frames", name));
  std::set<std::string_view> seen;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto& f = frames[i];
    if (!seen.insert(f.frame_id).second) {
      throw DataError(fmt::format("sequence '{}': duplicate frame_id '{}'", name, f.frame_id));
    }
    if (!std::isfinite(f.pose.x) || !std::isfinite(f.pose.y) || !std::isfinite(f.pose.z) ||
        !std::isfinite(f.pose.timestamp)) {
      throw DataError(fmt::format("sequence '{}': frame '{}' has a non-finite pose", name,
                                  f.frame_id));
    }
    if (i > 0 && f.pose.timestamp < frames[i - 1].pose.timestamp) {
      throw DataError(fmt::format("sequence '{}': timestamp decreases at frame '{}'", name,
                                  f.frame_id));
    }
  }
}

const FeatureMap& SequenceManifest::payload(std::size_t i) const {
  const auto& frame = frames.at(i);
  if (!frame.payload) {
    throw DataError(fmt::format("sequence '{}': payload of frame '{}' is not loaded", name,
                                frame.frame_id));
  }
  return *frame.payload;
}

// ---- manifest CSV ---------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string current;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(std::move(current));
      current.clear();
    } else if (c != '\r') {
      current.push_back(c);
    }
  }
  fields.push_back(std::move(current));
  return fields;
}

double parse_number(const std::string& text, std::string_view column, std::size_t line_no,
                    const fs::path& path) {
  double value = 0.0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (text.empty() || ec != std::errc{} || ptr != end || !std::isfinite(value)) {
    throw ParseError(fmt::format("{}:{}: column '{}' is not a number: '{}'", path.string(),
                                 line_no, column, text));
  }
  return value;
}

}  // namespace

SequenceManifest load_manifest(const fs::path& path, SequenceRole role) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open manifest '{}'", path.string()));

  SequenceManifest manifest;
  manifest.name = path.stem().string();
  manifest.role = role;

  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) {
    throw ParseError(fmt::format("{}: empty manifest", path.string()));
  }
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kManifestHeader) {
    throw ParseError(fmt::format("{}:1: expected header '{}'", path.string(), kManifestHeader));
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 7) {
      throw ParseError(fmt::format("{}:{}: expected 7 columns, got {}", path.string(), line_no,
                                   fields.size()));
    }
    PosedFrame frame;
    frame.frame_id = fields[0];
    if (frame.frame_id.empty()) {
      throw ParseError(fmt::format("{}:{}: empty frame_id", path.string(), line_no));
    }
    frame.pose.timestamp = parse_number(fields[1], "timestamp", line_no, path);
    frame.pose.x = parse_number(fields[2], "x", line_no, path);
    frame.pose.y = parse_number(fields[3], "y", line_no, path);
    frame.pose.z = fields[4].empty() ? 0.0 : parse_number(fields[4], "z", line_no, path);
    frame.condition = fields[5];
    frame.payload_path = fields[6];
    manifest.frames.push_back(std::move(frame));
  }
  if (!manifest.frames.empty()) manifest.condition = manifest.frames.front().condition;
  manifest.validate();
  return manifest;
}

void save_manifest(const SequenceManifest& manifest, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write manifest '{}'", path.string()));
  out << kManifestHeader << '\n';
  for (const auto& f : manifest.frames) {
    out << fmt::format("{},{},{},{},{},{},{}\n", f.frame_id, f.pose.timestamp, f.pose.x,
                       f.pose.y, f.pose.z, f.condition, f.payload_path);
  }
  if (!out) throw DataError(fmt::format("failed writing manifest '{}'", path.string()));
}

void load_payloads(SequenceManifest& manifest, const fs::path& base_dir) {
  for (auto& frame : manifest.frames) {
    if (frame.payload) continue;
    fs::path p(frame.payload_path);
    if (p.is_relative()) p = base_dir / p;
    frame.payload = std::make_shared<const FeatureMap>(read_feature_map(p));
  }
}

// ---- feature-map payload --------------------------------------------------

namespace {

constexpr char kPayloadMagic[4] = {'V', 'P', 'R', 'F'};

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  out.write(b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  out.write(b, 8);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw DataError("truncated payload header");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw DataError("truncated payload data");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

FeatureMap read_feature_map(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open payload '{}'", path.string()));
  char magic[4];
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kPayloadMagic)) {
    throw DataError(fmt::format("payload '{}': bad magic", path.string()));
  }
  try {
    const std::uint32_t h = get_u32(in);
    const std::uint32_t w = get_u32(in);
    const std::uint32_t d = get_u32(in);
    const std::size_t count = std::size_t{h} * w * d;
    std::vector<double> values(count);
    for (auto& v : values) v = std::bit_cast<double>(get_u64(in));
    FeatureMap map(h, w, d, std::move(values));
    validate(map);
    return map;
  } catch (const DataError& e) {
    throw DataError(fmt::format("payload '{}': {}", path.string(), e.what()));
  } catch (const InvalidInput& e) {
    throw DataError(fmt::format("payload '{}': {}", path.string(), e.what()));
  }
}

void write_feature_map(const fs::path& path, const FeatureMap& map) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write payload '{}'", path.string()));
  out.write(kPayloadMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(map.height()));
  put_u32(out, static_cast<std::uint32_t>(map.width()));
  put_u32(out, static_cast<std::uint32_t>(map.depth()));
  for (double v : map.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  if (!out) throw DataError(fmt::format("failed writing payload '{}'", path.string()));
}

// ---- mining ---------------------------------------------------------------

void MiningConfig::validate() const {
  if (!(positive_radius > 0.0) || !(negative_radius > positive_radius)) {
    throw InvalidInput(fmt::format(
        "mining: need negative_radius > positive_radius > 0, got {} / {}", negative_radius,
        positive_radius));
  }
  if (class_mode == ClassMode::kCell && !(class_cell > 0.0)) {
    throw InvalidInput("mining: class_cell must be > 0");
  }
}

std::vector<LabeledPair> mine_pairs(const SequenceManifest& seq, const MiningConfig& cfg,
                                    std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  std::vector<LabeledPair> pairs;
  std::vector<std::size_t> pos;
  std::vector<std::size_t> neg;
  for (std::size_t a = 0; a < seq.size(); ++a) {
    pos.clear();
    neg.clear();
    for (std::size_t b = 0; b < seq.size(); ++b) {
      if (b == a) continue;
      const double d = geo_distance(seq.frames[a].pose, seq.frames[b].pose);
      if (d <= cfg.positive_radius) pos.push_back(b);
      if (d >= cfg.negative_radius) neg.push_back(b);
    }
    if (pos.empty()) continue;
    pairs.push_back({a, pos[uniform_index(rng, pos.size())], true});
    if (!neg.empty()) pairs.push_back({a, neg[uniform_index(rng, neg.size())], false});
  }
  if (pairs.empty()) {
    throw MiningError(fmt::format(
        "sequence '{}': no frame pair lies within the positive radius {} m", seq.name,
        cfg.positive_radius));
  }
  return pairs;
}

MinedTuples mine_tuples(const SequenceManifest& seq, const MiningConfig& cfg,
                        std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  MinedTuples out;
  std::vector<std::pair<double, std::size_t>> pos;
  std::vector<std::size_t> neg;
  for (std::size_t q = 0; q < seq.size(); ++q) {
    pos.clear();
    neg.clear();
    for (std::size_t b = 0; b < seq.size(); ++b) {
      if (b == q) continue;
      const double d = geo_distance(seq.frames[q].pose, seq.frames[b].pose);
      if (d <= cfg.positive_radius) pos.emplace_back(d, b);
      if (d >= cfg.negative_radius) neg.push_back(b);
    }
    if (pos.empty()) {
      ++out.skipped_no_positive;
      continue;
    }
    if (neg.empty()) {
      ++out.skipped_no_negative;
      continue;
    }
    std::sort(pos.begin(), pos.end());
    TrainingTuple tuple;
    tuple.query = q;
    for (const auto& [d, b] : pos) tuple.positives.push_back(b);
    const std::size_t take = std::min(cfg.negatives_per_tuple, neg.size());
    for (std::size_t i = 0; i < take; ++i) {
      const std::size_t j = i + uniform_index(rng, neg.size() - i);
      std::swap(neg[i], neg[j]);
      tuple.negatives.push_back(neg[i]);
    }
    out.tuples.push_back(std::move(tuple));
  }
  return out;
}

std::map<std::string, std::size_t> ClassAssignment::by_frame_id(
    const SequenceManifest& seq) const {
  std::map<std::string, std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i) out.emplace(seq.frames[i].frame_id, labels[i]);
  return out;
}

namespace {

// Renumbers labels by first appearance in frame order.
ClassAssignment compact_labels(const std::vector<std::size_t>& raw) {
  std::map<std::size_t, std::size_t> remap;
  ClassAssignment out;
  out.labels.reserve(raw.size());
  for (std::size_t r : raw) {
    const auto [it, inserted] = remap.emplace(r, remap.size());
    out.labels.push_back(it->second);
  }
  out.classes = remap.size();
  return out;
}

}  // namespace

ClassAssignment assign_place_classes(const SequenceManifest& seq, const MiningConfig& cfg) {
  cfg.validate();
  if (seq.frames.empty()) throw MiningError("assign_place_classes: empty sequence");

  std::vector<std::size_t> raw(seq.size());
  std::size_t merged = 0;
  if (cfg.class_mode == ClassMode::kBinary) {
    std::vector<Pose> anchors = cfg.binary_anchors;
    if (anchors.empty()) anchors.push_back(seq.frames.front().pose);
    for (std::size_t i = 0; i < seq.size(); ++i) {
      raw[i] = 0;
      for (const auto& a : anchors) {
        if (geo_distance(seq.frames[i].pose, a) <= cfg.positive_radius) raw[i] = 1;
      }
    }
    std::size_t ones = std::count(raw.begin(), raw.end(), std::size_t{1});
    if (ones < 2 || seq.size() - ones < 2) {
      throw MiningError(fmt::format(
          "sequence '{}': binary classes need >= 2 frames each, got {} / {}", seq.name,
          seq.size() - ones, ones));
    }
  } else {
    // Square grid cells; each occupied cell becomes a class.
    std::map<std::pair<long long, long long>, std::vector<std::size_t>> cells;
    for (std::size_t i = 0; i < seq.size(); ++i) {
      const auto& p = seq.frames[i].pose;
      const auto key = std::make_pair(static_cast<long long>(std::floor(p.x / cfg.class_cell)),
                                      static_cast<long long>(std::floor(p.y / cfg.class_cell)));
      cells[key].push_back(i);
    }
    std::vector<std::vector<std::size_t>> groups;
    for (auto& [key, members] : cells) groups.push_back(std::move(members));

    std::vector<Pose> centers(groups.size());
    for (std::size_t g = 0; g < groups.size(); ++g) {
      for (std::size_t i : groups[g]) {
        centers[g].x += seq.frames[i].pose.x;
        centers[g].y += seq.frames[i].pose.y;
        centers[g].z += seq.frames[i].pose.z;
      }
      const double n = static_cast<double>(groups[g].size());
      centers[g].x /= n;
      centers[g].y /= n;
      centers[g].z /= n;
    }
    std::vector<std::size_t> group_of(seq.size());
    for (std::size_t g = 0; g < groups.size(); ++g) {
      for (std::size_t i : groups[g]) group_of[i] = g;
    }
    // A single-frame cell joins the nearest cell that has >= 2 frames.
    for (std::size_t g = 0; g < groups.size(); ++g) {
      if (groups[g].size() != 1) continue;
      const std::size_t frame = groups[g].front();
      std::size_t best = groups.size();
      double best_d = 0.0;
      for (std::size_t h = 0; h < groups.size(); ++h) {
        if (groups[h].size() < 2) continue;
        const double d = geo_distance(seq.frames[frame].pose, centers[h]);
        if (best == groups.size() || d < best_d) {
          best = h;
          best_d = d;
        }
      }
      if (best == groups.size()) {
        throw MiningError(fmt::format(
            "sequence '{}': every cell of size {} m holds a single frame", seq.name,
            cfg.class_cell));
      }
      group_of[frame] = best;
      ++merged;
    }
    for (std::size_t i = 0; i < seq.size(); ++i) raw[i] = group_of[i];
  }

  ClassAssignment out = compact_labels(raw);
  out.merged_singletons = merged;
  if (out.classes < 2) {
    throw MiningError(fmt::format(
        "sequence '{}': at least 2 place classes are required for ArcFace, got {}", seq.name,
        out.classes));
  }
  return out;
}

// ---- synthetic data -------------------------------------------------------

void SynthSpec::validate() const {
  if (!(route_length > 0.0) || !(frame_spacing > 0.0)) {
    throw InvalidInput("synth: route_length and frame_spacing must be > 0");
  }
  if (frame_count() < 10) {
    throw InvalidInput(fmt::format("synth: route of {} m at {} m spacing gives < 10 frames",
                                   route_length, frame_spacing));
  }
  if (conditions.size() < 2) throw InvalidInput("synth: at least 2 conditions are required");
  if (latent_dim < 2 || nuisance_dims == 0 || nuisance_dims >= latent_dim) {
    throw InvalidInput("synth: need 0 < nuisance_dims < latent_dim");
  }
  if (map_height == 0 || map_width == 0) throw InvalidInput("synth: empty map shape");
  if (!(condition_noise >= 0.0) || !(style_offset >= 0.0)) {
    throw InvalidInput("synth: noise and style offset must be >= 0");
  }
}

std::size_t SynthSpec::frame_count() const {
  return static_cast<std::size_t>(std::floor(route_length / frame_spacing + 1e-9));
}

namespace {

// Random orthonormal basis of R^dim (Gram-Schmidt on Gaussian vectors).
std::vector<Vector> random_basis(std::size_t dim, Rng& rng) {
  std::vector<Vector> basis;
  while (basis.size() < dim) {
    Vector v(dim);
    for (double& x : v) x = standard_normal(rng);
    for (const auto& b : basis) {
      const double proj = dot(v, b);
      for (std::size_t i = 0; i < dim; ++i) v[i] -= proj * b[i];
    }
    const double norm = l2_norm(v);
    if (norm < 1e-6) continue;
    for (double& x : v) x /= norm;
    basis.push_back(std::move(v));
  }
  return basis;
}

// Place code: Gaussian bumps along arc length, each carrying a random vector
// in the place subspace, so nearby positions get similar codes.
struct PlaceField {
  double route_length = 0.0;
  double width = 0.0;
  std::vector<double> centers;
  std::vector<Vector> amplitudes;

  Vector at(double s) const {
    Vector z(amplitudes.front().size(), 0.0);
    for (std::size_t b = 0; b < centers.size(); ++b) {
      double d = std::fmod(std::abs(s - centers[b]), route_length);
      d = std::min(d, route_length - d);
      const double weight = std::exp(-0.5 * d * d / (width * width));
      for (std::size_t i = 0; i < z.size(); ++i) z[i] += weight * amplitudes[b][i];
    }
    return z;
  }
};

}  // namespace

// Train-frame style spread, in units of style_offset. Wide enough that the
// test offsets (1x and 2x) fall inside the training distribution.
constexpr double kTrainStyleSpread = 2.0;

SynthDataset synth_dataset(std::uint64_t seed, const SynthSpec& spec) {
  spec.validate();
  const std::size_t n = spec.frame_count();
  const std::size_t dim = spec.latent_dim;
  const std::size_t height = spec.map_height;
  const std::size_t width = spec.map_width;

  Rng world(derive_seed(seed, 0));
  const auto basis = random_basis(dim, world);
  const std::vector<Vector> nuisance(basis.begin(),
                                     basis.begin() + static_cast<std::ptrdiff_t>(spec.nuisance_dims));
  const std::vector<Vector> place(basis.begin() + static_cast<std::ptrdiff_t>(spec.nuisance_dims),
                                  basis.end());

  PlaceField field;
  field.route_length = spec.route_length;
  const std::size_t bumps = std::max<std::size_t>(4, n / 2);
  field.width = spec.route_length / static_cast<double>(bumps);
  for (std::size_t b = 0; b < bumps; ++b) {
    field.centers.push_back(spec.route_length * static_cast<double>(b) /
                            static_cast<double>(bumps));
    Vector amp(dim, 0.0);
    for (const auto& e : place) {
      const double g = standard_normal(world);
      for (std::size_t i = 0; i < dim; ++i) amp[i] += g * e[i];
    }
    field.amplitudes.push_back(std::move(amp));
  }

  // Fixed per-row structure shared by every frame.
  std::vector<Vector> rows(height, Vector(dim));
  for (auto& r : rows) {
    for (double& x : r) x = 0.5 * standard_normal(world);
  }

  // Test-01 and Test-02 shift along one nuisance direction, Test-02 twice as far.
  Vector test_dir(dim, 0.0);
  {
    Vector coeff(nuisance.size());
    for (double& c : coeff) c = standard_normal(world);
    const double norm = l2_norm(coeff);
    for (std::size_t k = 0; k < nuisance.size(); ++k) {
      for (std::size_t i = 0; i < dim; ++i) test_dir[i] += coeff[k] / norm * nuisance[k][i];
    }
  }

  const double radius = spec.route_length / (2.0 * std::numbers::pi);
  const double speed = 10.0;  // m/s, only used for timestamps

  struct Replay {
    std::string name;
    SequenceRole role;
    double start_time;
    double test_offset;     // multiple of style_offset along test_dir
    bool per_frame_style;   // train: style drifts frame to frame in the nuisance span
  };
  const Replay replays[4] = {
      {"train", SequenceRole::kTrain, 0.0, 0.0, true},
      {"reference", SequenceRole::kReference, 3600.0, 0.0, false},
      {"test01", SequenceRole::kTest, 2 * 3600.0, 1.0, false},
      {"test02", SequenceRole::kTest, 3 * 3600.0, 2.0, false},
  };

  SequenceManifest out[4];
  for (std::size_t r = 0; r < 4; ++r) {
    const Replay& replay = replays[r];
    Rng rng(derive_seed(seed, 1 + r));
    SequenceManifest& seq = out[r];
    seq.name = replay.name;
    seq.role = replay.role;
    seq.condition = spec.conditions[r % spec.conditions.size()];
    seq.frames.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double s = spec.frame_spacing * static_cast<double>(i);
      PosedFrame frame;
      frame.frame_id = fmt::format("{}-{:05d}", replay.name, i);
      frame.condition = seq.condition;
      frame.pose.x = radius * std::cos(s / radius);
      frame.pose.y = radius * std::sin(s / radius);
      frame.pose.timestamp = replay.start_time + s / speed;

      Vector style(dim, 0.0);
      for (std::size_t k = 0; k < dim; ++k) {
        style[k] = replay.test_offset * spec.style_offset * test_dir[k];
      }
      if (replay.per_frame_style) {
        for (const auto& e : nuisance) {
          const double g = kTrainStyleSpread * spec.style_offset * standard_normal(rng);
          for (std::size_t k = 0; k < dim; ++k) style[k] += g * e[k];
        }
      }

      FeatureMap map(height, width, dim);
      for (std::size_t w = 0; w < width; ++w) {
        const double shift = (static_cast<double>(w) - 0.5 * static_cast<double>(width - 1)) *
                             0.5 * spec.frame_spacing;
        const Vector z = field.at(s + shift);
        for (std::size_t h = 0; h < height; ++h) {
          for (std::size_t k = 0; k < dim; ++k) {
            map.at(h, w, k) = z[k] + rows[h][k] + style[k];
          }
        }
      }
      if (spec.condition_noise > 0.0) {
        for (double& v : map.values()) v += spec.condition_noise * standard_normal(rng);
      }
      frame.payload = std::make_shared<const FeatureMap>(std::move(map));
      seq.frames.push_back(std::move(frame));
    }
  }
  return {std::move(out[0]), std::move(out[1]), std::move(out[2]), std::move(out[3])};
}

void write_dataset(SynthDataset& dataset, const fs::path& dir) {
  fs::create_directories(dir);
  for (SequenceManifest* seq :
       {&dataset.train, &dataset.reference, &dataset.test01, &dataset.test02}) {
    fs::create_directories(dir / seq->name);
    for (auto& frame : seq->frames) {
      frame.payload_path = (fs::path(seq->name) / (frame.frame_id + ".vprf")).generic_string();
      write_feature_map(dir / frame.payload_path, seq->payload(&frame - seq->frames.data()));
    }
    save_manifest(*seq, dir / (seq->name + ".csv"));
  }
}

}  // namespace vprb
