#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "nid/backbone.hpp"
#include "nid/channel.hpp"
#include "nid/trainer.hpp"

namespace nid::cli {

/// Bad config file, unknown key or out-of-range value.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GenerateSettings {
  int steps = 50;
  double eps_hybrid = 0.4;
  SteppingRule stepping = SteppingRule::parse("tau-waterfilling");
  InitPatternKind init_pattern = InitPatternKind::White;
  std::optional<double> snr_db;  // pattern default when unset
  std::size_t samples = 256;      // test samples used, 0 = all

  InitPatternSpec init_spec() const;
  InitPatternSpec init_spec(InitPatternKind kind) const;
};

struct DatasetSettings {
  std::size_t n_a = 8;
  std::size_t n_c = 16;
  std::size_t train_samples = 4096;
  std::size_t test_samples = 1024;
  ChannelParams synth;
  std::filesystem::path train_path;  // empty = <out>/train.nidf
  std::filesystem::path test_path;   // empty = <out>/test.nidf
};

struct EvalSettings {
  std::vector<InitPatternKind> patterns = InitPatternSpec::all_kinds();
  std::vector<SteppingRule> stepping{SteppingRule::parse("tau-linear"), SteppingRule::parse("tau-waterfilling")};
  std::size_t seeds = 3;
};

struct OracleSettings {
  std::size_t n_samples = 10000;
  int steps = 200;
  int substeps = 200;
  std::vector<double> eps_hybrid{0.4, 1.0};
  double denoiser_bias = 0.0;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "nid_out";
  int max_time = 1000;
  MixerConfig model;
  TrainConfig train;
  GenerateSettings generate;
  DatasetSettings dataset;
  EvalSettings eval;
  OracleSettings oracle;

  std::filesystem::path train_path() const;
  std::filesystem::path test_path() const;
};

/// Default configuration as a JSON document; defines the accepted key set.
nlohmann::ordered_json default_config_json();

/// Overlays `user` onto the defaults. Keys absent from the defaults and
/// type changes are rejected.
nlohmann::ordered_json merge_config(nlohmann::ordered_json base, const nlohmann::json& user);

/// Applies one "dot.path=value" override. The value is read as JSON when it
/// parses, otherwise as a string.
void apply_override(nlohmann::ordered_json& doc, const std::string& assignment);

RunConfig parse_config(const nlohmann::ordered_json& doc);
nlohmann::ordered_json to_json(const RunConfig& config);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(const std::string& bytes);
/// Hash of the canonical (dumped) resolved config.
std::uint64_t config_hash(const nlohmann::ordered_json& doc);

}  // namespace nid::cli
