#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "run_config.hpp"

namespace nid::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kToleranceFailure = 2, kIoFailure = 3 };

/// Resolved configuration plus what every result file records about it.
struct Context {
  RunConfig config;
  nlohmann::ordered_json resolved;
  std::uint64_t hash = 0;
  std::ostream* log = nullptr;

  static Context make(const nlohmann::ordered_json& doc, std::ostream& log);
  std::string hash_hex() const;
  /// "# nid <verb> config_hash=<hex> seed=<n>"
  std::string header(const std::string& verb) const;
};

// --- generation experiments ---------------------------------------------

struct GenerationCase {
  InitPatternSpec init;
  SteppingRule stepping;
  int steps = 50;
  double eps_hybrid = 0.4;
  bool identical = false;  // scalar time from the mean signal fraction
  std::uint64_t seed = 1;
  std::size_t samples = 0;  // 0 = all
};

struct GenerationOutcome {
  std::vector<double> final_nmse;  // per test sample
  std::vector<double> mean_tau;    // per step, averaged over samples
  std::vector<double> nmse;        // per step, averaged over samples

  double mean() const;
  double stddev() const;
};

/// Builds the reliability map and observation of each test sample from the
/// stream (seed, index), initializes and runs the sampler.
GenerationOutcome run_generation(const MixerModel& model, NormalizationMode norm, const ChannelDataset& test,
                                 const GenerationCase& c);

// --- verbs --------------------------------------------------------------

int cmd_dataset(const Context& ctx);

struct TrainOptions {
  bool grid = false;
};
int cmd_train(const Context& ctx, const TrainOptions& options);

struct GenerateOptionsCli {
  std::filesystem::path checkpoint;           // default <out>/model.nidm
  std::filesystem::path baseline_checkpoint;  // identical comparison; default: same model
  bool compare_identical = false;
  bool sweep = false;
};
int cmd_generate(const Context& ctx, const GenerateOptionsCli& options);

int cmd_eval(const Context& ctx, const std::filesystem::path& checkpoint);

int cmd_oracle(const Context& ctx);

/// Parses argv and dispatches; maps failures to exit codes.
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace nid::cli
