#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nid/rng.hpp"
#include "nid/types.hpp"

namespace nid {

/// Scalar signal-fraction schedule gamma(tau) = prod_{i=1..tau} sqrt(1 - 0.2 i / T).
///
/// Integer arguments read the tabulated product; fractional arguments
/// interpolate log(gamma) linearly between the neighbouring integers, so the
/// map stays strictly decreasing and is exactly invertible segment by segment.
/// Immutable after construction.
class Schedule {
 public:
  explicit Schedule(int max_time = 1000);

  int max_time() const { return max_time_; }

  double gamma(double tau) const;
  double log_gamma(double tau) const;
  /// sqrt(1 - gamma(tau)^2)
  double beta(double tau) const;
  /// Smallest tau with gamma(tau) = a. Values below gamma(T) clamp to T.
  double gamma_inverse(double a) const;

  std::span<const double> table() const { return table_; }

  /// Elementwise alpha/beta for a time matrix, repeated over `planes`.
  std::pair<std::vector<double>, std::vector<double>> maps(const TimeMatrix& tau, std::size_t planes) const;

 private:
  void check_tau(double tau) const;

  int max_time_;
  std::vector<double> table_;
  std::vector<double> log_table_;
};

// --- training-time tau patterns -------------------------------------------

enum class PatternKind { Same, Independent, Periodical, CarOnly, Mixed };

struct NoisePatternSpec {
  PatternKind kind = PatternKind::Same;
  // Periodical: inclusive period ranges (antenna axis, subcarrier axis).
  int antenna_period_min = 4;
  int antenna_period_max = 10;
  int subcarrier_period_min = 4;
  int subcarrier_period_max = 20;
  // Mixed: component kinds and their weights.
  std::vector<std::pair<PatternKind, double>> mixture;

  static NoisePatternSpec of(PatternKind kind) {
    NoisePatternSpec s;
    s.kind = kind;
    return s;
  }
  static NoisePatternSpec same() { return of(PatternKind::Same); }
  static NoisePatternSpec independent() { return of(PatternKind::Independent); }
  static NoisePatternSpec periodical() { return of(PatternKind::Periodical); }
  static NoisePatternSpec car_only() { return of(PatternKind::CarOnly); }
  /// Uniform choice among Same, Independent, Periodical.
  static NoisePatternSpec non_directional();
  /// Uniform choice among all four simple patterns.
  static NoisePatternSpec all();

  /// Parses "same", "independent", "periodical", "car-only", "non-directional", "all".
  static NoisePatternSpec parse(const std::string& name);
  std::string name() const;

  void validate() const;
};

/// Draws a time matrix of integer entries in {0, ..., T-1} according to `spec`.
TimeMatrix sample_tau(const NoisePatternSpec& spec, std::size_t rows, std::size_t cols, const Schedule& schedule,
                      Rng& rng);

/// Periodical pattern with fixed periods; exposed for tiling checks.
TimeMatrix sample_tau_periodic(std::size_t rows, std::size_t cols, std::size_t row_period, std::size_t col_period,
                               const Schedule& schedule, Rng& rng);

// --- generation-time stepping ---------------------------------------------

/// clamp(tau - tau0 / steps, 0)
TimeMatrix step_uniform(const TimeMatrix& tau, const TimeMatrix& tau0, int steps);

/// Water level L such that sum(max(v - L, 0)) == budget. Requires budget <= sum(v), v >= 0.
double water_level(std::span<const double> v, double budget);

/// min(tau, L) for the level L that removes exactly `budget` of l1 mass.
TimeMatrix step_waterfilling(const TimeMatrix& tau, double budget);

/// eps * uniform + (1 - eps) * waterfilling(budget = |tau0|_1 / steps).
TimeMatrix step_hybrid(const TimeMatrix& tau, const TimeMatrix& tau0, int steps, double eps);

/// The same blend carried out on alpha = gamma(tau): the uniform part moves alpha
/// linearly from gamma(tau0) to 1 over `steps`, the waterfilling part levels 1 - alpha.
TimeMatrix step_alpha_domain(const TimeMatrix& tau, const TimeMatrix& tau0, int steps, double eps,
                             const Schedule& schedule);

enum class StepDomain { Tau, Alpha };

/// A stepping rule: domain plus the blend weight of the uniform part
/// (eps = 1 linear, eps = 0 waterfilling).
struct SteppingRule {
  StepDomain domain = StepDomain::Tau;
  double eps = 0.0;

  /// "tau-linear", "tau-waterfilling", "tau-hybrid:0.7", "alpha-linear", ...
  static SteppingRule parse(const std::string& name);
  std::string name() const;

  /// The ten rules of the stepping sweep: linear, hybrid 0.7/0.5/0.3, waterfilling, per domain.
  static std::vector<SteppingRule> sweep();
};

/// Iterates a stepping rule from tau0. The final (steps-th) call returns the
/// zero matrix exactly so every rule, including the hybrids, terminates.
class Stepper {
 public:
  Stepper(SteppingRule rule, const Schedule& schedule, TimeMatrix tau0, int steps);

  TimeMatrix next(const TimeMatrix& tau);
  int taken() const { return taken_; }
  int steps() const { return steps_; }
  bool done() const { return taken_ >= steps_; }

 private:
  SteppingRule rule_;
  const Schedule* schedule_;
  TimeMatrix tau0_;
  int steps_;
  int taken_ = 0;
};

}  // namespace nid
