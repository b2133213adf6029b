#pragma once

#include <span>
#include <string>
#include <vector>

#include "nid/diffusion.hpp"
#include "nid/rng.hpp"
#include "nid/schedule.hpp"

namespace nid {

/// n points of dimension dim, row-major.
struct SampleSet {
  std::size_t dim = 0;
  std::vector<double> data;

  SampleSet() = default;
  explicit SampleSet(std::size_t d) : dim(d) {}
  std::size_t size() const { return dim == 0 ? 0 : data.size() / dim; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * dim, dim}; }
  void push(std::span<const double> x);
  /// Column j as a vector.
  std::vector<double> marginal(std::size_t j) const;
};

/// Isotropic Gaussian mixture prior. Test instrument for the analytic denoiser.
struct GmmPrior {
  std::vector<double> weights;
  std::vector<std::vector<double>> means;
  double sigma0 = 0.3;

  std::size_t dim() const { return means.empty() ? 0 : means.front().size(); }
  std::size_t components() const { return means.size(); }
  void validate() const;

  std::vector<double> sample(Rng& rng) const;
  SampleSet sample(std::size_t n, Rng& rng) const;
  double mean(std::size_t j) const;
  double second_moment(std::size_t j) const;
  double fourth_moment(std::size_t j) const;

  /// K = 2, means (-1, ..., -1) and (+1, ..., +1), sigma0 = 0.3, equal weights.
  static GmmPrior reference(std::size_t dim);
  static GmmPrior gaussian(std::vector<double> mean, double sigma0);
};

/// Exact posterior mean E[H0 | alpha * H0 + beta * xi = h], log-sum-exp stabilized.
std::vector<double> gmm_denoiser(std::span<const double> h, std::span<const double> alpha,
                                 std::span<const double> beta, const GmmPrior& prior);

/// Denoiser adapter around gmm_denoiser. A nonzero bias is added to every
/// output entry (used to check that the moment tests can fail).
class GmmDenoiser final : public Denoiser {
 public:
  explicit GmmDenoiser(GmmPrior prior, double bias = 0.0) : prior_(std::move(prior)), bias_(bias) {}
  std::vector<double> denoise(const DenoiserQuery& query) const override;

 private:
  GmmPrior prior_;
  double bias_;
};

enum class SdeScheme {
  ExactTransition,  // H <- (a/a_prev) H + sqrt(1 - (a/a_prev)^2) xi
  EulerMaruyama,    // H <- H + dlog(a) H + sqrt(-2 dlog(a)) xi
};

/// alpha_path[k] is the per-entry alpha after k substeps; alpha_path[0] is the
/// starting alpha (normally all ones). Entries must be non-increasing along the path.
using AlphaPath = std::vector<std::vector<double>>;

/// alpha = gamma(tau) along tau(s) = s * tau_final, s in [0, 1], n_substeps pieces.
AlphaPath make_alpha_path(std::span<const double> tau_final, int n_substeps, const Schedule& schedule);

std::vector<double> simulate_forward_sde(std::span<const double> h0, const AlphaPath& path, Rng& rng,
                                         SdeScheme scheme = SdeScheme::ExactTransition);

/// V-statistic energy distance 2E|X-Y| - E|X-X'| - E|Y-Y'|.
double energy_distance(const SampleSet& x, const SampleSet& y);

/// Two-sample Kolmogorov-Smirnov statistic sup |F_x - F_y|.
double ks_statistic(std::vector<double> x, std::vector<double> y);

struct MomentCheck {
  std::vector<double> mean_z;    // (sample mean - target) / SE, per coordinate
  std::vector<double> second_z;  // same for E[x^2]
  double max_abs_z() const;
};

MomentCheck check_moments(const SampleSet& samples, std::span<const double> target_mean,
                          std::span<const double> target_second);

// --- forward-law check -----------------------------------------------------

struct Theorem1Config {
  GmmPrior prior = GmmPrior::reference(2);
  std::vector<double> tau_final{500.0, 250.0};
  int n_substeps = 200;
  std::size_t n_samples = 10000;
  SdeScheme scheme = SdeScheme::ExactTransition;
  std::uint64_t seed = 1;
  double energy_tolerance = 0.02;
  double z_tolerance = 3.0;
};

struct Theorem1Report {
  double energy = 0.0;
  MomentCheck moments;  // SDE samples vs analytic alpha*H0 + beta*xi moments
  std::vector<double> ks;
  bool passed = false;
};

Theorem1Report check_theorem1(const Theorem1Config& config, const Schedule& schedule);

// --- reverse-process check -------------------------------------------------

struct Theorem2Config {
  GmmPrior prior = GmmPrior::reference(2);
  std::vector<std::vector<double>> starts{{500.0, 250.0}};
  std::vector<SteppingRule> rules{SteppingRule::parse("tau-linear"), SteppingRule::parse("tau-waterfilling"),
                                  SteppingRule::parse("alpha-linear"), SteppingRule::parse("alpha-waterfilling")};
  std::vector<double> eps_hybrid{0.4, 1.0};
  int steps = 200;
  std::size_t n_samples = 10000;
  std::uint64_t seed = 1;
  double denoiser_bias = 0.0;
  double energy_tolerance = 0.05;
  double pairwise_tolerance = 0.05;
  double z_tolerance = 3.0;
};

struct Theorem2Case {
  std::vector<double> start;
  std::string rule;
  double eps = 0.0;
  double energy = 0.0;
  MomentCheck moments;
  bool identity = false;  // start at tau = 0: output must equal input
  bool passed = false;
};

struct Theorem2Pair {
  std::vector<double> start;
  double eps = 0.0;
  std::string rule_a, rule_b;
  double energy = 0.0;
  bool passed = false;
};

struct Theorem2Report {
  std::vector<Theorem2Case> cases;
  std::vector<Theorem2Pair> pairs;
  bool passed = false;
};

Theorem2Report check_theorem2(const Theorem2Config& config, const Schedule& schedule);

/// JSON documents with stable key order.
std::string to_json(const Theorem1Report& report, const Theorem1Config& config);
std::string to_json(const Theorem2Report& report, const Theorem2Config& config);

}  // namespace nid
