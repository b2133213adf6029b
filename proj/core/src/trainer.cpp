#include "nid/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace nid {

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "adam") return OptimizerKind::Adam;
  if (name == "sgd") return OptimizerKind::Sgd;
  throw DomainError("unknown optimizer '" + name + "'");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::Adam ? "adam" : "sgd"; }

void TrainConfig::validate() const {
  if (batch_size < 1) throw DomainError("train: batch size must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw DomainError("train: learning rate must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && adam_eps > 0.0))
    throw DomainError("train: bad optimizer coefficients");
  if (plateau_stop && plateau_window < 1) throw DomainError("train: plateau window must be >= 1");
  pattern.validate();
}

TrainingBatch make_training_batch(std::span<const std::vector<double>> clean, std::size_t n_a, std::size_t n_c,
                                  const NoisePatternSpec& pattern, NormalizationMode norm, const Schedule& schedule,
                                  Rng& rng) {
  TrainingBatch batch;
  batch.inputs.reserve(clean.size());
  batch.taus.reserve(clean.size());
  batch.targets.reserve(clean.size());
  for (const auto& h : clean) {
    if (h.size() != 2 * n_a * n_c) throw ShapeError("training batch: sample shape does not match model");
    TimeMatrix tau = sample_tau(pattern, n_a, n_c, schedule, rng);
    const auto [alpha, beta] = schedule.maps(tau, 2);
    const NoisedSample noised = forward_noise(h, alpha, beta, rng);
    batch.inputs.push_back(normalize_input(noised.noisy, beta, norm));
    batch.targets.push_back(velocity_target(h, noised.noise, alpha, beta));
    batch.taus.push_back(std::move(tau));
  }
  return batch;
}

double batch_loss(const MixerModel& model, const TrainingBatch& batch, std::vector<double>* grad) {
  const std::size_t b = batch.inputs.size();
  if (b == 0) throw DomainError("batch loss: empty batch");
  ForwardCache cache;
  auto out = model.forward(batch.inputs, batch.taus, grad ? &cache : nullptr);
  double loss = 0.0;
  const double scale = 2.0 / static_cast<double>(b);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t k = 0; k < out[i].size(); ++k) {
      const double r = out[i][k] - batch.targets[i][k];
      loss += r * r;
      out[i][k] = scale * r;
    }
  loss /= static_cast<double>(b);
  if (grad) {
    grad->assign(model.parameter_count(), 0.0);
    model.backward(cache, out, *grad);
  }
  return loss;
}

Trainer::Trainer(MixerModel& model, TrainConfig config) : model_(&model), config_(std::move(config)) {
  config_.validate();
  m_.assign(model.parameter_count(), 0.0);
  v_.assign(model.parameter_count(), 0.0);
}

double Trainer::step(std::span<const std::vector<double>> clean, Rng& rng) {
  const auto& c = model_->config();
  return step(make_training_batch(clean, c.n_a, c.n_c, config_.pattern, config_.norm, model_->schedule(), rng));
}

double Trainer::step(const TrainingBatch& batch) {
  const double loss = batch_loss(*model_, batch, &grad_);
  if (!std::isfinite(loss)) {
    std::ostringstream msg;
    msg << "train: non-finite loss after " << t_ << " steps (batch of " << batch.inputs.size() << ")";
    throw TrainingError(msg.str());
  }
  if (config_.learning_rate == 0.0) return loss;
  auto params = model_->parameters();
  ++t_;
  if (config_.optimizer == OptimizerKind::Sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= config_.learning_rate * grad_[i];
    return loss;
  }
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * grad_[i];
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * grad_[i] * grad_[i];
    params[i] -= config_.learning_rate * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + config_.adam_eps);
  }
  return loss;
}

TrainResult train(MixerModel& model, const ChannelDataset& data, const TrainConfig& config,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  if (data.size() == 0) throw DomainError("train: empty dataset");
  if (data.n_a != model.config().n_a || data.n_c != model.config().n_c)
    throw ShapeError("train: dataset shape does not match model");
  Trainer trainer(model, config);
  Rng rng(config.seed);
  TrainResult result;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<std::vector<double>> batch;
  if (config.checkpoint_every > 0 && !config.checkpoint_dir.empty()) std::filesystem::create_directories(config.checkpoint_dir);
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(i - 1)));
      std::swap(order[i - 1], order[j]);
    }
    double sum = 0.0;
    for (std::size_t first = 0; first < order.size(); first += config.batch_size) {
      const std::size_t last = std::min(order.size(), first + config.batch_size);
      batch.clear();
      for (std::size_t k = first; k < last; ++k) batch.push_back(data.samples[order[k]]);
      sum += trainer.step(batch, rng) * static_cast<double>(last - first);
    }
    EpochRecord record{epoch, sum / static_cast<double>(order.size()),
                       std::chrono::duration<double>(clock::now() - start).count()};
    result.history.push_back(record);
    if (on_epoch) on_epoch(record);

    if (config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04zu.nidm", epoch);
      const auto path = config.checkpoint_dir / name;
      save_checkpoint(path, model, config.norm);
      result.checkpoints.push_back(path);
    }
    if (config.plateau_stop && result.history.size() > config.plateau_window) {
      const double before = result.history[result.history.size() - 1 - config.plateau_window].mean_loss;
      if ((before - record.mean_loss) / before < config.plateau_tolerance) {
        result.stopped_early = true;
        break;
      }
    }
  }
  return result;
}

}  // namespace nid
