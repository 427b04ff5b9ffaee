#include "vprb/run_config.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace vprb {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kSchema = R"json({
  "$schema": "http://json-schema.org/draft-07/schema#",
  "title": "vprb run config",
  "type": "object",
  "additionalProperties": false,
  "properties": {
    "seed": {"type": "integer", "minimum": 0},
    "dataset": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "kind": {"enum": ["synth", "manifests"]},
        "synth": {
          "type": "object",
          "additionalProperties": false,
          "properties": {
            "route_length": {"type": "number", "exclusiveMinimum": 0},
            "frame_spacing": {"type": "number", "exclusiveMinimum": 0},
            "latent_dim": {"type": "integer", "minimum": 1},
            "conditions": {"type": "array", "minItems": 4, "maxItems": 4, "items": {"type": "string"}},
            "condition_noise": {"type": "number", "minimum": 0},
            "style_offset": {"type": "number", "minimum": 0},
            "map_height": {"type": "integer", "minimum": 1},
            "map_width": {"type": "integer", "minimum": 1},
            "nuisance_dims": {"type": "integer", "minimum": 0}
          }
        },
        "train": {"type": "string"},
        "reference": {"type": "string"},
        "tests": {"type": "array", "minItems": 1, "items": {"type": "string"}}
      }
    },
    "mining": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "preset": {"enum": ["outdoor", "indoor"]},
        "positive_radius": {"type": "number", "exclusiveMinimum": 0},
        "negative_radius": {"type": "number", "exclusiveMinimum": 0},
        "negatives_per_tuple": {"type": "integer", "minimum": 1},
        "class_mode": {"enum": ["cell", "binary"]},
        "class_cell": {"type": "number", "exclusiveMinimum": 0},
        "binary_anchors": {
          "type": "array",
          "items": {"type": "array", "minItems": 3, "maxItems": 3, "items": {"type": "number"}}
        }
      }
    },
    "model": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "hidden_channels": {"type": "integer", "minimum": 1},
        "output_depth": {"type": "integer", "minimum": 1},
        "pooling": {"enum": ["mac", "spoc", "gem", "netvlad"]},
        "gem_p_init": {"type": "number", "minimum": 1, "maximum": 1000},
        "gem_shared_p": {"type": "boolean"},
        "netvlad_clusters": {"type": "integer", "minimum": 1},
        "netvlad_intra_norm": {"type": "boolean"},
        "netvlad_alpha": {"type": "number", "exclusiveMinimum": 0}
      }
    },
    "train": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "loss": {"enum": ["contrastive", "triplet", "arcface"]},
        "learning_rate": {"type": "number", "minimum": 0},
        "learning_rates": {
          "type": "object",
          "additionalProperties": false,
          "properties": {
            "contrastive": {"type": "number", "minimum": 0},
            "triplet": {"type": "number", "minimum": 0},
            "arcface": {"type": "number", "minimum": 0}
          }
        },
        "momentum": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "epochs": {"type": "integer", "minimum": 1},
        "batch_size": {"type": "integer", "minimum": 1},
        "contrastive": {
          "type": "object",
          "additionalProperties": false,
          "properties": {
            "margin": {"type": "number", "exclusiveMinimum": 0},
            "distance": {"enum": ["squared", "euclidean"]}
          }
        },
        "triplet": {
          "type": "object",
          "additionalProperties": false,
          "properties": {"margin": {"type": "number", "exclusiveMinimum": 0}}
        },
        "arcface": {
          "type": "object",
          "additionalProperties": false,
          "properties": {
            "scale": {"type": "number", "exclusiveMinimum": 0},
            "margin": {"type": "number", "minimum": 0, "exclusiveMaximum": 1.5707963267948966}
          }
        }
      }
    },
    "eval": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "taus": {"type": "array", "minItems": 1, "items": {"type": "number", "exclusiveMinimum": 0}},
        "tau_unit": {"enum": ["m", "cm"]},
        "top_n": {"type": "integer", "minimum": 1}
      }
    },
    "matrix": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "poolings": {"type": "array", "minItems": 1, "items": {"enum": ["mac", "spoc", "gem", "netvlad"]}},
        "losses": {"type": "array", "minItems": 1, "items": {"enum": ["contrastive", "triplet", "arcface"]}}
      }
    }
  }
})json";

// Checks the draft-07 keywords the schema above uses.
void check(const json& value, const json& schema, const std::string& where) {
  const std::string at = where.empty() ? "<root>" : where;
  if (schema.contains("enum")) {
    bool found = false;
    for (const auto& e : schema["enum"]) found = found || e == value;
    if (!found) {
      throw ConfigError(fmt::format("{}: {} is not one of {}", at, value.dump(),
                                    schema["enum"].dump()));
    }
  }
  if (schema.contains("type")) {
    const std::string type = schema["type"];
    const bool ok = (type == "object" && value.is_object()) ||
                    (type == "array" && value.is_array()) ||
                    (type == "string" && value.is_string()) ||
                    (type == "boolean" && value.is_boolean()) ||
                    (type == "number" && value.is_number()) ||
                    (type == "integer" && value.is_number_integer());
    if (!ok) throw ConfigError(fmt::format("{}: expected {}, got {}", at, type, value.dump()));
  }
  if (value.is_number()) {
    const double v = value.get<double>();
    auto bound = [&](const char* key, bool violated_if_less, bool strict) {
      if (!schema.contains(key)) return;
      const double b = schema[key].get<double>();
      const bool bad = violated_if_less ? (strict ? v <= b : v < b) : (strict ? v >= b : v > b);
      if (bad || !std::isfinite(v)) {
        throw ConfigError(fmt::format("{}: {} violates {} {}", at, value.dump(), key, b));
      }
    };
    bound("minimum", true, false);
    bound("exclusiveMinimum", true, true);
    bound("maximum", false, false);
    bound("exclusiveMaximum", false, true);
  }
  if (value.is_array()) {
    if (schema.contains("minItems") && value.size() < schema["minItems"].get<std::size_t>()) {
      throw ConfigError(fmt::format("{}: needs at least {} items", at, schema["minItems"].dump()));
    }
    if (schema.contains("maxItems") && value.size() > schema["maxItems"].get<std::size_t>()) {
      throw ConfigError(fmt::format("{}: allows at most {} items", at, schema["maxItems"].dump()));
    }
    if (schema.contains("items")) {
      for (std::size_t i = 0; i < value.size(); ++i) {
        check(value[i], schema["items"], fmt::format("{}[{}]", where, i));
      }
    }
  }
  if (value.is_object() && schema.contains("properties")) {
    const json& props = schema["properties"];
    for (const auto& [key, sub] : value.items()) {
      const std::string path = where.empty() ? key : where + "." + key;
      if (!props.contains(key)) {
        if (schema.value("additionalProperties", true) == false) {
          throw ConfigError(fmt::format("unknown config key '{}'", path));
        }
        continue;
      }
      check(sub, props[key], path);
    }
  }
}

const json& schema_json() {
  static const json schema = json::parse(kSchema);
  return schema;
}

void apply_override(json& root, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError(fmt::format("--set expects key=value, got '{}'", assignment));
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &root;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = key.find('.', start);
    const std::string part = key.substr(start, dot - start);
    if (part.empty()) throw ConfigError(fmt::format("--set: malformed key '{}'", key));
    if (!node->is_object()) {
      throw ConfigError(fmt::format("--set: '{}' does not name an object", key.substr(0, start)));
    }
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

template <typename T>
void read(const json& obj, const char* key, T& into) {
  if (obj.contains(key)) into = obj[key].get<T>();
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

std::optional<double> LossLearningRates::get(LossKind loss) const {
  switch (loss) {
    case LossKind::kContrastive: return contrastive;
    case LossKind::kTriplet: return triplet;
    case LossKind::kArcFace: return arcface;
  }
  return std::nullopt;
}

TrainConfig RunConfig::train_config(PoolingKind pooling, LossKind loss) const {
  TrainConfig cfg = train;
  cfg.model.pooling = pooling;
  cfg.loss = loss;
  if (const auto lr = loss_learning_rates.get(loss)) cfg.learning_rate = *lr;
  return cfg;
}

std::string_view run_config_schema() { return kSchema; }

RunConfig parse_run_config(std::string_view json_text, const std::vector<std::string>& overrides,
                           const fs::path& base_dir, std::optional<std::uint64_t> seed_override) {
  json root = json::parse(json_text, nullptr, false);
  if (root.is_discarded()) throw ConfigError("config is not valid JSON");
  if (!root.is_object()) throw ConfigError("config root must be an object");
  for (const auto& o : overrides) apply_override(root, o);
  check(root, schema_json(), "");

  RunConfig cfg;
  read(root, "seed", cfg.seed);
  if (seed_override) cfg.seed = *seed_override;

  const json ds = root.value("dataset", json::object());
  cfg.dataset.synthetic = ds.value("kind", "synth") == "synth";
  if (cfg.dataset.synthetic) {
    if (ds.contains("train") || ds.contains("reference") || ds.contains("tests")) {
      throw ConfigError("dataset: manifest paths require kind = \"manifests\"");
    }
    const json s = ds.value("synth", json::object());
    SynthSpec& spec = cfg.dataset.synth;
    read(s, "route_length", spec.route_length);
    read(s, "frame_spacing", spec.frame_spacing);
    read(s, "latent_dim", spec.latent_dim);
    read(s, "conditions", spec.conditions);
    read(s, "condition_noise", spec.condition_noise);
    read(s, "style_offset", spec.style_offset);
    read(s, "map_height", spec.map_height);
    read(s, "map_width", spec.map_width);
    read(s, "nuisance_dims", spec.nuisance_dims);
  } else {
    if (ds.contains("synth")) throw ConfigError("dataset: 'synth' requires kind = \"synth\"");
    if (!ds.contains("train") || !ds.contains("reference") || !ds.contains("tests")) {
      throw ConfigError("dataset: manifests mode needs 'train', 'reference' and 'tests'");
    }
    cfg.dataset.train = resolve(base_dir, ds["train"]);
    cfg.dataset.reference = resolve(base_dir, ds["reference"]);
    for (const auto& t : ds["tests"]) cfg.dataset.tests.push_back(resolve(base_dir, t));
  }

  const json mn = root.value("mining", json::object());
  MiningConfig& mining = cfg.train.mining;
  mining = mn.value("preset", "outdoor") == "indoor" ? MiningConfig::indoor()
                                                       : MiningConfig::outdoor();
  read(mn, "positive_radius", mining.positive_radius);
  read(mn, "negative_radius", mining.negative_radius);
  read(mn, "negatives_per_tuple", mining.negatives_per_tuple);
  if (mn.contains("class_mode")) {
    mining.class_mode = mn["class_mode"] == "binary" ? ClassMode::kBinary : ClassMode::kCell;
  }
  read(mn, "class_cell", mining.class_cell);
  if (mn.contains("binary_anchors")) {
    for (const auto& a : mn["binary_anchors"]) {
      mining.binary_anchors.push_back({a[0].get<double>(), a[1].get<double>(), a[2].get<double>(), 0.0});
    }
  }

  const json md = root.value("model", json::object());
  ModelConfig& model = cfg.train.model;
  read(md, "hidden_channels", model.hidden_channels);
  read(md, "output_depth", model.output_depth);
  if (md.contains("pooling")) model.pooling = parse_pooling_kind(md["pooling"].get<std::string>());
  read(md, "gem_p_init", model.gem_p_init);
  read(md, "gem_shared_p", model.gem_shared_p);
  read(md, "netvlad_clusters", model.netvlad_clusters);
  read(md, "netvlad_intra_norm", model.netvlad_intra_norm);
  read(md, "netvlad_alpha", model.netvlad_alpha);
  if (cfg.dataset.synthetic) model.input_depth = cfg.dataset.synth.latent_dim;

  const json tr = root.value("train", json::object());
  TrainConfig& t = cfg.train;
  if (tr.contains("loss")) t.loss = parse_loss_kind(tr["loss"].get<std::string>());
  read(tr, "learning_rate", t.learning_rate);
  if (tr.contains("learning_rates")) {
    const json& lrs = tr["learning_rates"];
    if (lrs.contains("contrastive")) cfg.loss_learning_rates.contrastive = lrs["contrastive"].get<double>();
    if (lrs.contains("triplet")) cfg.loss_learning_rates.triplet = lrs["triplet"].get<double>();
    if (lrs.contains("arcface")) cfg.loss_learning_rates.arcface = lrs["arcface"].get<double>();
  }
  read(tr, "momentum", t.momentum);
  read(tr, "epochs", t.epochs);
  read(tr, "batch_size", t.batch_size);
  if (tr.contains("contrastive")) {
    read(tr["contrastive"], "margin", t.contrastive.margin);
    if (tr["contrastive"].contains("distance")) {
      t.contrastive.distance = tr["contrastive"]["distance"] == "euclidean"
                                   ? PairDistance::kEuclidean
                                   : PairDistance::kSquaredEuclidean;
    }
  }
  if (tr.contains("triplet")) read(tr["triplet"], "margin", t.triplet.margin);
  if (tr.contains("arcface")) {
    read(tr["arcface"], "scale", t.arcface.scale);
    read(tr["arcface"], "margin", t.arcface.margin);
  }
  t.seed = cfg.seed;

  const json ev = root.value("eval", json::object());
  read(ev, "taus", cfg.eval.taus);
  if (ev.contains("tau_unit")) cfg.eval.unit = parse_tau_unit(ev["tau_unit"].get<std::string>());
  read(ev, "top_n", cfg.eval.top_n);

  const json mx = root.value("matrix", json::object());
  if (mx.contains("poolings")) {
    cfg.matrix.poolings.clear();
    for (const auto& p : mx["poolings"]) cfg.matrix.poolings.push_back(parse_pooling_kind(p.get<std::string>()));
  }
  if (mx.contains("losses")) {
    cfg.matrix.losses.clear();
    for (const auto& l : mx["losses"]) cfg.matrix.losses.push_back(parse_loss_kind(l.get<std::string>()));
  }

  // Cross-field checks the schema cannot express.
  try {
    if (cfg.dataset.synthetic) cfg.dataset.synth.validate();
    t.validate();
  } catch (const InvalidInput& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

RunConfig load_run_config(const fs::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot read config '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();

  std::optional<std::uint64_t> seed;
  if (const char* env = std::getenv("VPRB_SEED"); env != nullptr && *env != '\0') {
    std::uint64_t v = 0;
    const char* end = env + std::char_traits<char>::length(env);
    const auto r = std::from_chars(env, end, v);
    if (r.ec != std::errc() || r.ptr != end) {
      throw ConfigError(fmt::format("VPRB_SEED='{}' is not an unsigned integer", env));
    }
    seed = v;
  }
  try {
    return parse_run_config(ss.str(), overrides, path.parent_path(), seed);
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::string to_json(const RunConfig& cfg) {
  const TrainConfig& t = cfg.train;
  const ModelConfig& m = t.model;
  const MiningConfig& mn = t.mining;
  json root;
  root["seed"] = cfg.seed;
  if (cfg.dataset.synthetic) {
    const SynthSpec& s = cfg.dataset.synth;
    root["dataset"] = {{"kind", "synth"},
                       {"synth",
                        {{"route_length", s.route_length},
                         {"frame_spacing", s.frame_spacing},
                         {"latent_dim", s.latent_dim},
                         {"conditions", s.conditions},
                         {"condition_noise", s.condition_noise},
                         {"style_offset", s.style_offset},
                         {"map_height", s.map_height},
                         {"map_width", s.map_width},
                         {"nuisance_dims", s.nuisance_dims}}}};
  } else {
    json tests = json::array();
    for (const auto& p : cfg.dataset.tests) tests.push_back(p.string());
    root["dataset"] = {{"kind", "manifests"},
                       {"train", cfg.dataset.train.string()},
                       {"reference", cfg.dataset.reference.string()},
                       {"tests", tests}};
  }
  json anchors = json::array();
  for (const auto& a : mn.binary_anchors) anchors.push_back({a.x, a.y, a.z});
  root["mining"] = {{"positive_radius", mn.positive_radius},
                    {"negative_radius", mn.negative_radius},
                    {"negatives_per_tuple", mn.negatives_per_tuple},
                    {"class_mode", mn.class_mode == ClassMode::kCell ? "cell" : "binary"},
                    {"class_cell", mn.class_cell},
                    {"binary_anchors", anchors}};
  root["model"] = {{"hidden_channels", m.hidden_channels},
                   {"output_depth", m.output_depth},
                   {"pooling", to_string(m.pooling)},
                   {"gem_p_init", m.gem_p_init},
                   {"gem_shared_p", m.gem_shared_p},
                   {"netvlad_clusters", m.netvlad_clusters},
                   {"netvlad_intra_norm", m.netvlad_intra_norm},
                   {"netvlad_alpha", m.netvlad_alpha}};
  json lrs = json::object();
  for (LossKind l : {LossKind::kContrastive, LossKind::kTriplet, LossKind::kArcFace}) {
    if (const auto lr = cfg.loss_learning_rates.get(l)) lrs[std::string(to_string(l))] = *lr;
  }
  root["train"] = {
      {"loss", to_string(t.loss)},
      {"learning_rate", t.learning_rate},
      {"learning_rates", lrs},
      {"momentum", t.momentum},
      {"epochs", t.epochs},
      {"batch_size", t.batch_size},
      {"contrastive",
       {{"margin", t.contrastive.margin},
        {"distance", t.contrastive.distance == PairDistance::kEuclidean ? "euclidean" : "squared"}}},
      {"triplet", {{"margin", t.triplet.margin}}},
      {"arcface", {{"scale", t.arcface.scale}, {"margin", t.arcface.margin}}}};
  root["eval"] = {{"taus", cfg.eval.taus},
                  {"tau_unit", to_string(cfg.eval.unit)},
                  {"top_n", cfg.eval.top_n}};
  json poolings = json::array();
  for (PoolingKind p : cfg.matrix.poolings) poolings.push_back(to_string(p));
  json losses = json::array();
  for (LossKind l : cfg.matrix.losses) losses.push_back(to_string(l));
  root["matrix"] = {{"poolings", poolings}, {"losses", losses}};
  return root.dump(2) + "\n";
}

}  // namespace vprb
