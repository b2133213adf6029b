#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nid/backbone.hpp"
#include "nid/dataset.hpp"
#include "nid/diffusion.hpp"
#include "nid/schedule.hpp"

namespace nid {

/// Raised when a training step produces a non-finite loss.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class OptimizerKind { Adam, Sgd };

OptimizerKind parse_optimizer(const std::string& name);
std::string to_string(OptimizerKind kind);

struct TrainConfig {
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  std::size_t epochs = 20;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  NoisePatternSpec pattern = NoisePatternSpec::all();
  NormalizationMode norm = NormalizationMode::IdenticalNoisePower;
  std::uint64_t seed = 1;
  /// Write a checkpoint every this many epochs (0 = never) into checkpoint_dir.
  std::size_t checkpoint_every = 0;
  std::filesystem::path checkpoint_dir;
  /// Stop once the relative improvement over plateau_window epochs drops below plateau_tolerance.
  bool plateau_stop = false;
  std::size_t plateau_window = 5;
  double plateau_tolerance = 1e-3;

  void validate() const;
};

/// Noised batch ready for the network: inputs, times and velocity targets.
struct TrainingBatch {
  std::vector<std::vector<double>> inputs;
  std::vector<TimeMatrix> taus;
  std::vector<std::vector<double>> targets;
};

/// Draws tau and xi for every clean sample (in order) and builds the network
/// inputs and velocity targets.
TrainingBatch make_training_batch(std::span<const std::vector<double>> clean, std::size_t n_a, std::size_t n_c,
                                  const NoisePatternSpec& pattern, NormalizationMode norm, const Schedule& schedule,
                                  Rng& rng);

/// (1/B) sum_i ||f(x_i, tau_i) - y_i||^2 and its parameter gradient.
double batch_loss(const MixerModel& model, const TrainingBatch& batch, std::vector<double>* grad);

/// Owns the optimizer state for one model.
class Trainer {
 public:
  Trainer(MixerModel& model, TrainConfig config);

  const TrainConfig& config() const { return config_; }

  /// One optimizer step on a batch of clean channels. Returns the batch mean loss.
  double step(std::span<const std::vector<double>> clean, Rng& rng);
  /// One optimizer step on a prepared batch.
  double step(const TrainingBatch& batch);

 private:
  MixerModel* model_;
  TrainConfig config_;
  std::vector<double> grad_, m_, v_;
  std::uint64_t t_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  bool stopped_early = false;
  std::vector<std::filesystem::path> checkpoints;
};

/// Epoch loop over a shuffled dataset. The optional callback sees each finished epoch.
TrainResult train(MixerModel& model, const ChannelDataset& data, const TrainConfig& config,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

}  // namespace nid
