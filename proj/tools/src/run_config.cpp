#include "run_config.hpp"

#include <sstream>

namespace nid::cli {

using ojson = nlohmann::ordered_json;

InitPatternSpec GenerateSettings::init_spec() const { return init_spec(init_pattern); }

InitPatternSpec GenerateSettings::init_spec(InitPatternKind kind) const {
  auto spec = InitPatternSpec::make(kind);
  if (snr_db) spec.snr_db = *snr_db;
  return spec;
}

std::filesystem::path RunConfig::train_path() const {
  return dataset.train_path.empty() ? output_dir / "train.nidf" : dataset.train_path;
}

std::filesystem::path RunConfig::test_path() const {
  return dataset.test_path.empty() ? output_dir / "test.nidf" : dataset.test_path;
}

ojson to_json(const RunConfig& c) {
  ojson doc;
  doc["seed"] = c.seed;
  doc["output_dir"] = c.output_dir.string();
  doc["schedule"] = {{"T", c.max_time}};
  const auto& d = c.dataset;
  doc["dataset"] = {{"n_a", d.n_a},
                    {"n_c", d.n_c},
                    {"train_samples", d.train_samples},
                    {"test_samples", d.test_samples},
                    {"min_paths", d.synth.min_paths},
                    {"max_paths", d.synth.max_paths},
                    {"subcarrier_spacing", d.synth.subcarrier_spacing},
                    {"delay_spread", d.synth.delay_spread},
                    {"angle_center_range", d.synth.angle_center_range},
                    {"angle_spread", d.synth.angle_spread},
                    {"train_path", d.train_path.string()},
                    {"test_path", d.test_path.string()}};
  const auto& m = c.model;
  doc["model"] = {{"n_blocks", m.n_blocks},
                  {"hidden_mult", m.hidden_mult},
                  {"embed_dim", m.embed_dim},
                  {"scheme", to_string(m.scheme)},
                  {"averaging", to_string(m.averaging)},
                  {"activation", to_string(m.activation)}};
  const auto& t = c.train;
  doc["train"] = {{"batch_size", t.batch_size},
                  {"learning_rate", t.learning_rate},
                  {"epochs", t.epochs},
                  {"optimizer", to_string(t.optimizer)},
                  {"beta1", t.beta1},
                  {"beta2", t.beta2},
                  {"adam_eps", t.adam_eps},
                  {"pattern", t.pattern.name()},
                  {"norm", to_string(t.norm)},
                  {"checkpoint_every", t.checkpoint_every},
                  {"plateau_stop", t.plateau_stop},
                  {"plateau_window", t.plateau_window},
                  {"plateau_tolerance", t.plateau_tolerance}};
  const auto& g = c.generate;
  doc["generate"] = {{"steps", g.steps},
                     {"eps_hybrid", g.eps_hybrid},
                     {"stepping", g.stepping.name()},
                     {"init_pattern", to_string(g.init_pattern)},
                     {"snr_db", g.snr_db ? ojson(*g.snr_db) : ojson(nullptr)},
                     {"samples", g.samples}};
  ojson patterns = ojson::array(), rules = ojson::array();
  for (auto k : c.eval.patterns) patterns.push_back(to_string(k));
  for (const auto& r : c.eval.stepping) rules.push_back(r.name());
  doc["eval"] = {{"patterns", patterns}, {"stepping", rules}, {"seeds", c.eval.seeds}};
  doc["oracle"] = {{"n_samples", c.oracle.n_samples},
                   {"steps", c.oracle.steps},
                   {"substeps", c.oracle.substeps},
                   {"eps_hybrid", c.oracle.eps_hybrid},
                   {"denoiser_bias", c.oracle.denoiser_bias}};
  return doc;
}

ojson default_config_json() { return to_json(RunConfig{}); }

namespace {

bool compatible(const ojson& base, const nlohmann::json& value) {
  if (base.is_null()) return value.is_null() || value.is_number();
  if (base.is_number()) return value.is_number();
  if (base.is_string()) return value.is_string();
  if (base.is_boolean()) return value.is_boolean();
  if (base.is_array()) return value.is_array();
  if (base.is_object()) return value.is_object();
  return false;
}

void merge_into(ojson& base, const nlohmann::json& user, const std::string& prefix) {
  if (!user.is_object()) throw ConfigError("config: expected an object at '" + (prefix.empty() ? "<root>" : prefix) + "'");
  for (const auto& [key, value] : user.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw ConfigError("config: unknown key '" + path + "'");
    ojson& slot = base[key];
    if (!compatible(slot, value)) throw ConfigError("config: wrong type for '" + path + "'");
    if (slot.is_object())
      merge_into(slot, value, path);
    else
      slot = value;
  }
}

std::uint64_t as_count(const ojson& v, const std::string& path) {
  if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0))
    throw ConfigError("config: '" + path + "' must be a non-negative integer");
  return v.get<std::uint64_t>();
}

int as_int(const ojson& v, const std::string& path) {
  if (!v.is_number_integer()) throw ConfigError("config: '" + path + "' must be an integer");
  return v.get<int>();
}

template <class F>
auto named(const std::string& path, F&& parse) {
  try {
    return parse();
  } catch (const DomainError& e) {
    throw ConfigError("config: '" + path + "': " + e.what());
  }
}

}  // namespace

ojson merge_config(ojson base, const nlohmann::json& user) {
  merge_into(base, user, "");
  return base;
}

void apply_override(ojson& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  nlohmann::json patch = value;
  std::string rest = key;
  std::vector<std::string> parts;
  for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1))
    parts.push_back(rest.substr(0, pos));
  parts.push_back(rest);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = nlohmann::json{{*it, patch}};
  doc = merge_config(std::move(doc), patch);
}

RunConfig parse_config(const ojson& doc) {
  const ojson full = merge_config(default_config_json(), doc);
  RunConfig c;
  c.seed = as_count(full["seed"], "seed");
  c.output_dir = full["output_dir"].get<std::string>();
  c.max_time = as_int(full["schedule"]["T"], "schedule.T");
  if (c.max_time < 1) throw ConfigError("config: 'schedule.T' must be >= 1");

  const auto& d = full["dataset"];
  c.dataset.n_a = as_count(d["n_a"], "dataset.n_a");
  c.dataset.n_c = as_count(d["n_c"], "dataset.n_c");
  c.dataset.train_samples = as_count(d["train_samples"], "dataset.train_samples");
  c.dataset.test_samples = as_count(d["test_samples"], "dataset.test_samples");
  c.dataset.synth.min_paths = as_int(d["min_paths"], "dataset.min_paths");
  c.dataset.synth.max_paths = as_int(d["max_paths"], "dataset.max_paths");
  c.dataset.synth.subcarrier_spacing = d["subcarrier_spacing"].get<double>();
  c.dataset.synth.delay_spread = d["delay_spread"].get<double>();
  c.dataset.synth.angle_center_range = d["angle_center_range"].get<double>();
  c.dataset.synth.angle_spread = d["angle_spread"].get<double>();
  c.dataset.train_path = d["train_path"].get<std::string>();
  c.dataset.test_path = d["test_path"].get<std::string>();
  named("dataset", [&] { c.dataset.synth.validate(); return 0; });
  if (c.dataset.n_a == 0 || c.dataset.n_c == 0) throw ConfigError("config: dataset dimensions must be positive");

  const auto& m = full["model"];
  c.model.n_a = c.dataset.n_a;
  c.model.n_c = c.dataset.n_c;
  c.model.max_time = c.max_time;
  c.model.n_blocks = as_count(m["n_blocks"], "model.n_blocks");
  c.model.hidden_mult = as_count(m["hidden_mult"], "model.hidden_mult");
  c.model.embed_dim = as_count(m["embed_dim"], "model.embed_dim");
  c.model.scheme = named("model.scheme", [&] { return parse_embedding_scheme(m["scheme"].get<std::string>()); });
  c.model.averaging = named("model.averaging", [&] { return parse_averaging(m["averaging"].get<std::string>()); });
  c.model.activation = named("model.activation", [&] { return parse_activation(m["activation"].get<std::string>()); });
  named("model", [&] { c.model.validate(); return 0; });

  const auto& t = full["train"];
  c.train.batch_size = as_count(t["batch_size"], "train.batch_size");
  c.train.learning_rate = t["learning_rate"].get<double>();
  c.train.epochs = as_count(t["epochs"], "train.epochs");
  c.train.optimizer = named("train.optimizer", [&] { return parse_optimizer(t["optimizer"].get<std::string>()); });
  c.train.beta1 = t["beta1"].get<double>();
  c.train.beta2 = t["beta2"].get<double>();
  c.train.adam_eps = t["adam_eps"].get<double>();
  c.train.pattern = named("train.pattern", [&] { return NoisePatternSpec::parse(t["pattern"].get<std::string>()); });
  c.train.norm = named("train.norm", [&] { return parse_normalization(t["norm"].get<std::string>()); });
  c.train.checkpoint_every = as_count(t["checkpoint_every"], "train.checkpoint_every");
  c.train.plateau_stop = t["plateau_stop"].get<bool>();
  c.train.plateau_window = as_count(t["plateau_window"], "train.plateau_window");
  c.train.plateau_tolerance = t["plateau_tolerance"].get<double>();
  c.train.seed = c.seed;
  c.train.checkpoint_dir = c.output_dir / "checkpoints";
  named("train", [&] { c.train.validate(); return 0; });

  const auto& g = full["generate"];
  c.generate.steps = as_int(g["steps"], "generate.steps");
  if (c.generate.steps < 1) throw ConfigError("config: 'generate.steps' must be >= 1");
  c.generate.eps_hybrid = g["eps_hybrid"].get<double>();
  if (!(c.generate.eps_hybrid >= 0.0 && c.generate.eps_hybrid <= 1.0))
    throw ConfigError("config: 'generate.eps_hybrid' must lie in [0, 1]");
  c.generate.stepping = named("generate.stepping", [&] { return SteppingRule::parse(g["stepping"].get<std::string>()); });
  c.generate.init_pattern =
      named("generate.init_pattern", [&] { return InitPatternSpec::parse(g["init_pattern"].get<std::string>()).kind; });
  if (!g["snr_db"].is_null()) c.generate.snr_db = g["snr_db"].get<double>();
  c.generate.samples = as_count(g["samples"], "generate.samples");

  const auto& e = full["eval"];
  c.eval.patterns.clear();
  c.eval.stepping.clear();
  for (const auto& p : e["patterns"]) {
    if (!p.is_string()) throw ConfigError("config: 'eval.patterns' must hold strings");
    c.eval.patterns.push_back(named("eval.patterns", [&] { return InitPatternSpec::parse(p.get<std::string>()).kind; }));
  }
  for (const auto& r : e["stepping"]) {
    if (!r.is_string()) throw ConfigError("config: 'eval.stepping' must hold strings");
    c.eval.stepping.push_back(named("eval.stepping", [&] { return SteppingRule::parse(r.get<std::string>()); }));
  }
  if (c.eval.patterns.empty() || c.eval.stepping.empty())
    throw ConfigError("config: 'eval.patterns' and 'eval.stepping' must not be empty");
  c.eval.seeds = as_count(e["seeds"], "eval.seeds");
  if (c.eval.seeds == 0) throw ConfigError("config: 'eval.seeds' must be >= 1");

  const auto& o = full["oracle"];
  c.oracle.n_samples = as_count(o["n_samples"], "oracle.n_samples");
  c.oracle.steps = as_int(o["steps"], "oracle.steps");
  c.oracle.substeps = as_int(o["substeps"], "oracle.substeps");
  c.oracle.eps_hybrid.clear();
  for (const auto& e : o["eps_hybrid"]) {
    if (!e.is_number() || !(e.get<double>() >= 0.0 && e.get<double>() <= 1.0))
      throw ConfigError("config: 'oracle.eps_hybrid' must hold numbers in [0, 1]");
    c.oracle.eps_hybrid.push_back(e.get<double>());
  }
  if (c.oracle.eps_hybrid.empty()) throw ConfigError("config: 'oracle.eps_hybrid' must not be empty");
  c.oracle.denoiser_bias = o["denoiser_bias"].get<double>();
  if (c.oracle.n_samples < 2 || c.oracle.steps < 1 || c.oracle.substeps < 1)
    throw ConfigError("config: oracle sample and step counts must be positive");
  return c;
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t config_hash(const ojson& doc) { return fnv1a(doc.dump()); }

}  // namespace nid::cli
