#include "nid/diffusion.hpp"

#include <algorithm>
#include <cmath>

namespace nid {

NormalizationMode parse_normalization(const std::string& name) {
  if (name == "power" || name == "total-power") return NormalizationMode::IdenticalTotalPower;
  if (name == "noise" || name == "noise-power") return NormalizationMode::IdenticalNoisePower;
  throw DomainError("unknown normalization mode '" + name + "'");
}

std::string to_string(NormalizationMode mode) {
  return mode == NormalizationMode::IdenticalTotalPower ? "power" : "noise";
}

NoisedSample forward_noise(std::span<const double> h0, std::span<const double> alpha, std::span<const double> beta,
                           Rng& rng) {
  require_same_size(h0, alpha, "forward_noise");
  require_same_size(h0, beta, "forward_noise");
  NoisedSample out;
  out.noisy.resize(h0.size());
  out.noise.resize(h0.size());
  for (std::size_t i = 0; i < h0.size(); ++i) {
    out.noise[i] = rng.normal();
    out.noisy[i] = alpha[i] * h0[i] + beta[i] * out.noise[i];
  }
  return out;
}

NoisedSample forward_noise(std::span<const double> h0, const TimeMatrix& tau, const Schedule& schedule, Rng& rng) {
  const auto [alpha, beta] = schedule.maps(tau, planes_for(h0.size(), tau.size()));
  return forward_noise(h0, alpha, beta, rng);
}

std::vector<double> normalize_input(std::span<const double> h, std::span<const double> beta, NormalizationMode mode) {
  require_same_size(h, beta, "normalize_input");
  std::vector<double> out(h.begin(), h.end());
  if (mode == NormalizationMode::IdenticalTotalPower) return out;
  double inv_sq = 0.0;
  for (double b : beta) {
    const double inv = 1.0 / std::max(b, kCleanBeta);
    inv_sq += inv * inv;
  }
  const double z = std::sqrt(static_cast<double>(h.size())) / std::sqrt(inv_sq);
  for (std::size_t i = 0; i < h.size(); ++i) out[i] = z * h[i] / std::max(beta[i], kCleanBeta);
  return out;
}

std::vector<double> velocity_target(std::span<const double> h0, std::span<const double> xi,
                                    std::span<const double> alpha, std::span<const double> beta) {
  require_same_size(h0, xi, "velocity_target");
  require_same_size(h0, alpha, "velocity_target");
  require_same_size(h0, beta, "velocity_target");
  std::vector<double> y(h0.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = alpha[i] * xi[i] - beta[i] * h0[i];
  return y;
}

std::vector<double> recover_x0(std::span<const double> g, std::span<const double> v, std::span<const double> alpha,
                               std::span<const double> beta) {
  require_same_size(g, v, "recover_x0");
  require_same_size(g, alpha, "recover_x0");
  require_same_size(g, beta, "recover_x0");
  std::vector<double> x(g.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = alpha[i] * g[i] - beta[i] * v[i];
  return x;
}

std::vector<double> ddim_step(std::span<const double> g, std::span<const double> d_hat, std::span<const double> alpha,
                              std::span<const double> beta, std::span<const double> alpha_next,
                              std::span<const double> beta_next, double eps, Rng& rng) {
  for (auto s : {d_hat, alpha, beta, alpha_next, beta_next}) require_same_size(g, s, "ddim_step");
  if (!(eps >= 0.0 && eps <= 1.0)) throw DomainError("ddim_step: eps outside [0, 1]");
  const double noise_scale = std::sqrt(1.0 - eps * eps);
  std::vector<double> out(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (beta[i] < kCleanBeta) {
      out[i] = g[i];
      continue;
    }
    const double ratio = beta_next[i] / beta[i];
    out[i] = (alpha_next[i] - eps * alpha[i] * ratio) * d_hat[i] + eps * ratio * g[i];
    if (noise_scale > 0.0) out[i] += noise_scale * beta_next[i] * rng.normal();
  }
  return out;
}

namespace {

double mean_of(const TimeMatrix& tau) { return tau.empty() ? 0.0 : total(tau.values()) / tau.size(); }

bool all_zero(const TimeMatrix& tau) {
  return std::all_of(tau.values().begin(), tau.values().end(), [](double t) { return t == 0.0; });
}

}  // namespace

GenerateResult generate(const Denoiser& denoiser, const Schedule& schedule, std::span<const double> h_init,
                        const TimeMatrix& tau0, const GenerateOptions& options, Rng& rng) {
  if (options.steps < 1) throw DomainError("generate: steps must be >= 1");
  const std::size_t planes = planes_for(h_init.size(), tau0.size());
  GenerateResult result;
  result.sample.assign(h_init.begin(), h_init.end());
  if (options.keep_trajectory) result.trajectory.push_back({0, mean_of(tau0), result.sample});
  if (all_zero(tau0)) return result;

  Stepper stepper(options.stepping, schedule, tau0, options.steps);
  TimeMatrix tau = tau0;
  auto [alpha, beta] = schedule.maps(tau, planes);
  while (!all_zero(tau)) {
    TimeMatrix tau_next = stepper.next(tau);
    auto [alpha_next, beta_next] = schedule.maps(tau_next, planes);
    const std::vector<double> net_in = normalize_input(result.sample, beta, options.norm);
    const std::vector<double> d_hat = denoiser.denoise({result.sample, net_in, tau, alpha, beta});
    result.sample = ddim_step(result.sample, d_hat, alpha, beta, alpha_next, beta_next, options.eps_hybrid, rng);
    tau = std::move(tau_next);
    alpha = std::move(alpha_next);
    beta = std::move(beta_next);
    ++result.steps_taken;
    if (options.keep_trajectory) result.trajectory.push_back({result.steps_taken, mean_of(tau), result.sample});
  }
  return result;
}

}  // namespace nid
