#pragma once

#include <functional>
#include <span>
#include <vector>

#include "nid/rng.hpp"
#include "nid/schedule.hpp"
#include "nid/types.hpp"

namespace nid {

// All state vectors are stacked real vectors of length planes * rows * cols,
// plane-major. Complex channels use two planes (Re, Im); alpha/beta maps are
// given per real entry (see Schedule::maps).

enum class NormalizationMode { IdenticalTotalPower, IdenticalNoisePower };

NormalizationMode parse_normalization(const std::string& name);
std::string to_string(NormalizationMode mode);

/// Smallest beta honoured by normalize_input and ddim_step; below it an entry
/// counts as clean.
inline constexpr double kCleanBeta = 1e-6;

struct NoisedSample {
  std::vector<double> noisy;
  std::vector<double> noise;
};

/// h_t = alpha * h0 + beta * xi with fresh standard Gaussian xi.
NoisedSample forward_noise(std::span<const double> h0, std::span<const double> alpha, std::span<const double> beta,
                           Rng& rng);
NoisedSample forward_noise(std::span<const double> h0, const TimeMatrix& tau, const Schedule& schedule, Rng& rng);

/// Network input. Total-power mode is the identity; noise-power mode scales
/// by Z * beta^-1 with Z = sqrt(d) / ||beta^-1||_2, beta clamped at kCleanBeta.
std::vector<double> normalize_input(std::span<const double> h, std::span<const double> beta, NormalizationMode mode);

/// alpha * xi - beta * h0
std::vector<double> velocity_target(std::span<const double> h0, std::span<const double> xi,
                                    std::span<const double> alpha, std::span<const double> beta);

/// alpha * g - beta * v
std::vector<double> recover_x0(std::span<const double> g, std::span<const double> v, std::span<const double> alpha,
                               std::span<const double> beta);

/// Hybrid non-identical DDIM update:
///   [a' - eps a b'/b] d_hat + eps b'/b g + sqrt(1 - eps^2) b' xi.
/// Entries with beta < kCleanBeta are already clean and pass through.
std::vector<double> ddim_step(std::span<const double> g, std::span<const double> d_hat, std::span<const double> alpha,
                              std::span<const double> beta, std::span<const double> alpha_next,
                              std::span<const double> beta_next, double eps, Rng& rng);

/// What a denoiser sees at one generation step.
struct DenoiserQuery {
  std::span<const double> state;          // un-normalized g
  std::span<const double> network_input;  // g after normalize_input
  const TimeMatrix& tau;
  std::span<const double> alpha;
  std::span<const double> beta;
};

/// Estimate of E[H0 | state]. Implementations must be safe to call concurrently.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual std::vector<double> denoise(const DenoiserQuery& query) const = 0;
};

struct GenerateOptions {
  int steps = 50;
  SteppingRule stepping{StepDomain::Tau, 0.0};
  double eps_hybrid = 0.4;
  NormalizationMode norm = NormalizationMode::IdenticalNoisePower;
  bool keep_trajectory = false;
};

struct Snapshot {
  int step = 0;
  double mean_tau = 0.0;
  std::vector<double> state;
};

struct GenerateResult {
  std::vector<double> sample;
  std::vector<Snapshot> trajectory;  // steps + 1 entries when kept, step 0 = initial state
  int steps_taken = 0;
};

/// Runs the non-identical DDIM loop from (h_init, tau0) down to tau = 0.
GenerateResult generate(const Denoiser& denoiser, const Schedule& schedule, std::span<const double> h_init,
                        const TimeMatrix& tau0, const GenerateOptions& options, Rng& rng);

}  // namespace nid
