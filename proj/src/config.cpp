#include "mtseg/config.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <type_traits>

#include "mtseg/error.hpp"

namespace mtseg {

using nlohmann::json;

DataSource parse_data_source(std::string_view name) {
  if (name == "synthetic") return DataSource::kSynthetic;
  if (name == "synthetic-dir") return DataSource::kSyntheticDir;
  if (name == "mri") return DataSource::kMri;
  throw ConfigError("unknown data source '" + std::string(name) + "' (expected synthetic, synthetic-dir or mri)");
}

std::string_view to_string(DataSource s) {
  switch (s) {
    case DataSource::kSynthetic: return "synthetic";
    case DataSource::kSyntheticDir: return "synthetic-dir";
    case DataSource::kMri: return "mri";
  }
  return "synthetic";
}

void DataConfig::validate() const {
  if (source == DataSource::kSynthetic) synth.validate();
  if (source != DataSource::kSynthetic && root.empty()) throw ConfigError("data.root is required for this data source");
  if (!(target_spacing_mm > 0.0)) throw ConfigError("data.target_spacing_mm must be positive");
}

void RunConfig::validate() const {
  train.validate();
  data.validate();
}

namespace {

// ---------------------------------------------------------------------------
// Field table: one entry per configuration key.

struct Field {
  std::string section;
  std::string key;
  std::function<json(const RunConfig&)> get;
  std::function<void(RunConfig&, const json&)> set;
};

template <class T>
T as(const json& v) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw ConfigError("expected a boolean");
    return v.get<bool>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) throw ConfigError("expected a string");
    return v.get<std::string>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) throw ConfigError("expected an integer");
    if constexpr (std::is_unsigned_v<T>) {
      if (v.is_number_unsigned()) return v.get<T>();
      if (v.get<std::int64_t>() < 0) throw ConfigError("expected a non-negative integer");
    }
    return v.get<T>();
  } else {
    if (!v.is_number()) throw ConfigError("expected a number");
    return v.get<T>();
  }
}

template <class Acc>
Field field(std::string section, std::string key, Acc acc) {
  return {std::move(section), std::move(key), [acc](const RunConfig& c) { return json(acc(c)); },
          [acc](RunConfig& c, const json& v) {
            auto& ref = acc(c);
            ref = as<std::decay_t<decltype(ref)>>(v);
          }};
}

template <class Acc, class Parse, class Print>
Field enum_field(std::string section, std::string key, Acc acc, Parse parse, Print print) {
  return {std::move(section), std::move(key), [acc, print](const RunConfig& c) { return json(std::string(print(acc(c)))); },
          [acc, parse](RunConfig& c, const json& v) { acc(c) = parse(as<std::string>(v)); }};
}

std::string_view consistency_name(ConsistencyKind k) { return k == ConsistencyKind::kBce ? "bce" : "mse"; }
ConsistencyKind parse_consistency(std::string_view s) {
  if (s == "bce") return ConsistencyKind::kBce;
  if (s == "mse") return ConsistencyKind::kMse;
  throw ConfigError("unknown consistency loss '" + std::string(s) + "' (expected bce or mse)");
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    // train
    f.push_back(enum_field("train", "mode", [](auto& c) -> auto& { return c.train.mode; }, parse_train_mode,
                           [](TrainMode m) { return to_string(m); }));
    f.push_back(field("train", "seed", [](auto& c) -> auto& { return c.train.seed; }));
    f.push_back(field("train", "epochs", [](auto& c) -> auto& { return c.train.epochs; }));
    f.push_back(field("train", "batch_size", [](auto& c) -> auto& { return c.train.batch_size; }));
    f.push_back(field("train", "labeled_per_batch", [](auto& c) -> auto& { return c.train.labeled_per_batch; }));
    f.push_back(field("train", "steps_per_epoch", [](auto& c) -> auto& { return c.train.steps_per_epoch; }));
    f.push_back(field("train", "l2", [](auto& c) -> auto& { return c.train.l2; }));
    f.push_back(field("train", "adam_beta1", [](auto& c) -> auto& { return c.train.adam_beta1; }));
    f.push_back(field("train", "adam_beta2", [](auto& c) -> auto& { return c.train.adam_beta2; }));
    f.push_back(field("train", "adam_eps", [](auto& c) -> auto& { return c.train.adam_eps; }));
    f.push_back(enum_field("train", "consistency", [](auto& c) -> auto& { return c.train.consistency; },
                           parse_consistency, consistency_name));
    f.push_back(enum_field("train", "select", [](auto& c) -> auto& { return c.train.select; }, parse_selection,
                           [](Selection s) { return to_string(s); }));
    f.push_back(field("train", "per_slice_metrics", [](auto& c) -> auto& { return c.train.per_slice_metrics; }));
    f.push_back(field("train", "threshold", [](auto& c) -> auto& { return c.train.threshold; }));
    // schedule
    f.push_back(field("schedule", "consistency_max", [](auto& c) -> auto& { return c.train.schedule.consistency_max; }));
    f.push_back(field("schedule", "consistency_rampup_epochs",
                      [](auto& c) -> auto& { return c.train.schedule.consistency_rampup_epochs; }));
    f.push_back(field("schedule", "lr_max", [](auto& c) -> auto& { return c.train.schedule.lr_max; }));
    f.push_back(field("schedule", "lr_rampup_epochs", [](auto& c) -> auto& { return c.train.schedule.lr_rampup_epochs; }));
    f.push_back(enum_field("schedule", "ramp", [](auto& c) -> auto& { return c.train.schedule.ramp; }, parse_ramp_shape,
                           [](RampShape r) { return to_string(r); }));
    f.push_back(field("schedule", "alpha_early", [](auto& c) -> auto& { return c.train.alpha.early; }));
    f.push_back(field("schedule", "alpha_late", [](auto& c) -> auto& { return c.train.alpha.late; }));
    f.push_back(field("schedule", "alpha_switch_epoch", [](auto& c) -> auto& { return c.train.alpha.switch_epoch; }));
    // model
    f.push_back(field("model", "base_channels", [](auto& c) -> auto& { return c.train.model.base_channels; }));
    f.push_back(field("model", "depth", [](auto& c) -> auto& { return c.train.model.depth; }));
    f.push_back(field("model", "dropout_rate", [](auto& c) -> auto& { return c.train.model.dropout_rate; }));
    f.push_back(field("model", "bn_momentum", [](auto& c) -> auto& { return c.train.model.bn_momentum; }));
    f.push_back(enum_field("model", "upsample", [](auto& c) -> auto& { return c.train.model.upsample; },
                           parse_upsample_mode, [](UpsampleMode m) { return to_string(m); }));
    f.push_back(field("model", "zero_head", [](auto& c) -> auto& { return c.train.model.zero_head; }));
    // augment
    f.push_back(field("augment", "rotation_bound_deg", [](auto& c) -> auto& { return c.train.augment.rotation_bound_deg; }));
    f.push_back(field("augment", "noise_std", [](auto& c) -> auto& { return c.train.augment.noise_std; }));
    f.push_back(field("augment", "mask_border", [](auto& c) -> auto& { return c.train.augment.mask_border; }));
    // data
    f.push_back(enum_field("data", "source", [](auto& c) -> auto& { return c.data.source; }, parse_data_source,
                           [](DataSource s) { return to_string(s); }));
    f.push_back(field("data", "root", [](auto& c) -> auto& { return c.data.root; }));
    f.push_back(field("data", "synth_labeled", [](auto& c) -> auto& { return c.data.synth.labeled; }));
    f.push_back(field("data", "synth_unlabeled", [](auto& c) -> auto& { return c.data.synth.unlabeled; }));
    f.push_back(field("data", "synth_validation", [](auto& c) -> auto& { return c.data.synth.validation; }));
    f.push_back(field("data", "synth_test", [](auto& c) -> auto& { return c.data.synth.test; }));
    f.push_back(field("data", "synth_size", [](auto& c) -> auto& { return c.data.synth.size; }));
    f.push_back(field("data", "synth_seed", [](auto& c) -> auto& { return c.data.synth_seed; }));
    f.push_back(field("data", "target_spacing_mm", [](auto& c) -> auto& { return c.data.target_spacing_mm; }));
    f.push_back(field("data", "split_seed", [](auto& c) -> auto& { return c.data.split_seed; }));
    f.push_back(field("data", "split_train_labeled", [](auto& c) -> auto& { return c.data.split.train_labeled; }));
    f.push_back(field("data", "split_validation", [](auto& c) -> auto& { return c.data.split.validation; }));
    f.push_back(field("data", "split_unlabeled", [](auto& c) -> auto& { return c.data.split.unlabeled; }));
    f.push_back(field("data", "split_test", [](auto& c) -> auto& { return c.data.split.test; }));
    return f;
  }();
  return table;
}

const Field* find_field(const std::string& section, const std::string& key) {
  for (const auto& f : fields())
    if (f.section == section && f.key == key) return &f;
  return nullptr;
}

std::string join(const std::vector<std::string>& items, const char* sep) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : sep) + s;
  return out;
}

json to_json_sections(const RunConfig& cfg, bool with_data) {
  json doc = json::object();
  for (const auto& f : fields()) {
    if (!with_data && f.section == "data") continue;
    doc[f.section][f.key] = f.get(cfg);
  }
  return doc;
}

RunConfig parse_doc(const json& doc, bool with_data) {
  if (!doc.is_object()) throw ConfigError("configuration must be a JSON object");
  RunConfig cfg;
  bool have_base = false;
  if (doc.contains("preset")) {
    if (!doc["preset"].is_string()) throw ConfigError("'preset' must be a string");
    cfg = preset(doc["preset"].get<std::string>());
    have_base = true;
  }
  std::vector<std::string> unknown, missing, invalid;
  std::set<std::string> seen;
  for (const auto& [section, body] : doc.items()) {
    if (section == "preset") continue;
    const bool known_section = section == "train" || section == "schedule" || section == "model" ||
                               section == "augment" || (with_data && section == "data");
    if (!known_section) {
      unknown.push_back(section);
      continue;
    }
    if (!body.is_object()) {
      invalid.push_back(section + ": expected an object");
      continue;
    }
    for (const auto& [key, value] : body.items()) {
      const Field* f = find_field(section, key);
      if (f == nullptr) {
        unknown.push_back(section + "." + key);
        continue;
      }
      seen.insert(section + "." + key);
      try {
        f->set(cfg, value);
      } catch (const ConfigError& e) {
        invalid.push_back(section + "." + key + ": " + e.what());
      }
    }
  }
  if (!have_base) {
    for (const auto& f : fields()) {
      if (!with_data && f.section == "data") continue;
      if (!seen.count(f.section + "." + f.key)) missing.push_back(f.section + "." + f.key);
    }
  }
  std::vector<std::string> problems;
  if (!unknown.empty()) problems.push_back("unknown keys: " + join(unknown, ", "));
  if (!missing.empty()) problems.push_back("missing keys: " + join(missing, ", "));
  if (!invalid.empty()) problems.push_back("invalid values: " + join(invalid, "; "));
  if (!problems.empty()) throw ConfigError(join(problems, "\n"));
  return cfg;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

RunConfig paper_common() {
  RunConfig c;
  c.train.adam_beta1 = 0.9;
  c.train.adam_beta2 = 0.999;
  c.train.batch_size = 8;
  c.train.model.dropout_rate = 0.5;
  c.train.model.bn_momentum = 0.9;
  c.train.model.base_channels = 64;
  c.train.schedule.lr_max = 0.0006;
  c.train.schedule.lr_rampup_epochs = 50;
  c.train.schedule.consistency_max = 2.9;
  c.train.schedule.consistency_rampup_epochs = 100;
  c.train.alpha = {0.99, 0.999, 50};
  c.train.augment.rotation_bound_deg = 4.5;
  c.train.augment.noise_std = 0.1;
  c.data.source = DataSource::kMri;
  c.data.root = "data/scgm";
  c.data.target_spacing_mm = 0.25;
  c.data.split = {8, 8, 40, 12};
  return c;
}

// Desk-scale synthetic setting shared by the comparison presets.
RunConfig synth_gate() {
  RunConfig c = paper_common();
  c.data.source = DataSource::kSynthetic;
  c.data.root = "";
  c.data.synth = {8, 200, 16, 50, 64};
  c.train.model.base_channels = 16;
  c.train.epochs = 60;
  c.train.steps_per_epoch = 50;
  c.train.schedule.lr_rampup_epochs = 5;
  c.train.schedule.consistency_rampup_epochs = 15;
  c.train.alpha.switch_epoch = 10;
  return c;
}

}  // namespace

std::vector<std::string> preset_names() {
  return {"paper-semi", "paper-supervised", "synth-smoke", "synth-semi", "synth-supervised"};
}

RunConfig preset(const std::string& name) {
  if (name == "paper-semi") {
    RunConfig c = paper_common();
    c.train.mode = TrainMode::kSemiSupervised;
    c.train.l2 = 0.0006;
    c.train.epochs = 350;
    return c;
  }
  if (name == "paper-supervised") {
    RunConfig c = paper_common();
    c.train.mode = TrainMode::kSupervised;
    c.train.l2 = 0.0008;
    c.train.epochs = 1600;
    return c;
  }
  if (name == "synth-semi") {
    RunConfig c = synth_gate();
    c.train.mode = TrainMode::kSemiSupervised;
    c.train.l2 = 0.0006;
    return c;
  }
  if (name == "synth-supervised") {
    RunConfig c = synth_gate();
    c.train.mode = TrainMode::kSupervised;
    c.train.l2 = 0.0008;
    return c;
  }
  if (name == "synth-smoke") {
    RunConfig c = paper_common();
    c.train.mode = TrainMode::kSemiSupervised;
    c.train.l2 = 0.0006;
    c.train.epochs = 4;
    c.train.model.base_channels = 16;
    c.train.schedule.lr_rampup_epochs = 1;
    c.train.schedule.consistency_rampup_epochs = 2;
    c.train.alpha.switch_epoch = 2;
    c.data.source = DataSource::kSynthetic;
    c.data.root = "";
    c.data.synth = {8, 32, 8, 16, 64};
    return c;
  }
  throw ConfigError("unknown preset '" + name + "' (available: " + join(preset_names(), ", ") + ")");
}

json to_json(const RunConfig& cfg) { return to_json_sections(cfg, true); }

RunConfig run_config_from_json(const json& doc) {
  RunConfig cfg = parse_doc(doc, true);
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open configuration file");
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return run_config_from_json(doc);
}

RunConfig apply_overrides(const RunConfig& base, const std::vector<std::string>& overrides) {
  RunConfig cfg = base;
  std::vector<std::string> problems;
  for (const auto& item : overrides) {
    const auto eq = item.find('=');
    const auto dot = item.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
      problems.push_back("'" + item + "': expected section.key=value");
      continue;
    }
    const std::string section = item.substr(0, dot);
    const std::string key = item.substr(dot + 1, eq - dot - 1);
    const std::string text = item.substr(eq + 1);
    const Field* f = find_field(section, key);
    if (f == nullptr) {
      problems.push_back("unknown key " + section + "." + key);
      continue;
    }
    json value;
    try {
      value = json::parse(text);
    } catch (const json::exception&) {
      value = text;
    }
    try {
      f->set(cfg, value);
    } catch (const ConfigError& e) {
      problems.push_back(section + "." + key + ": " + e.what());
    }
  }
  if (!problems.empty()) throw ConfigError(join(problems, "\n"));
  cfg.validate();
  return cfg;
}

void apply_environment(RunConfig& cfg) {
  if (const char* root = std::getenv("MTSEG_DATA_ROOT"); root != nullptr && *root != '\0') cfg.data.root = root;
}

std::uint64_t config_hash(const RunConfig& cfg) { return fnv1a(to_json(cfg).dump()); }
std::uint64_t config_hash(const TrainConfig& cfg) { return fnv1a(train_config_json(cfg).dump()); }

json train_config_json(const TrainConfig& cfg) {
  RunConfig rc;
  rc.train = cfg;
  return to_json_sections(rc, false);
}

TrainConfig train_config_from_json(const json& doc) {
  RunConfig rc = parse_doc(doc, false);
  rc.train.validate();
  return rc.train;
}

SlicePools load_pools(const DataConfig& cfg) {
  cfg.validate();
  switch (cfg.source) {
    case DataSource::kSynthetic: return synth_pools(cfg.synth, cfg.synth_seed);
    case DataSource::kSyntheticDir: return load_synth_dataset(cfg.root);
    case DataSource::kMri: return load_mri_pools({cfg.root, cfg.target_spacing_mm, cfg.split_seed, cfg.split});
  }
  throw ConfigError("unknown data source");
}

}  // namespace mtseg
