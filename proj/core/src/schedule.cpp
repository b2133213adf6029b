#include "nid/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace nid {

Schedule::Schedule(int max_time) : max_time_(max_time) {
  if (max_time < 1) throw DomainError("schedule: T must be positive");
  const auto n = static_cast<std::size_t>(max_time) + 1;
  table_.resize(n);
  log_table_.resize(n);
  long double acc = 0.0L;
  log_table_[0] = 0.0;
  table_[0] = 1.0;
  for (std::size_t i = 1; i < n; ++i) {
    acc += 0.5L * std::log1p(-0.2L * static_cast<long double>(i) / static_cast<long double>(max_time));
    log_table_[i] = static_cast<double>(acc);
    table_[i] = static_cast<double>(std::exp(acc));
  }
}

void Schedule::check_tau(double tau) const {
  if (!std::isfinite(tau) || tau < 0.0 || tau > static_cast<double>(max_time_))
    throw DomainError("gamma: tau outside [0, T]");
}

double Schedule::log_gamma(double tau) const {
  check_tau(tau);
  const double fl = std::floor(tau);
  const auto k = static_cast<std::size_t>(fl);
  const double frac = tau - fl;
  if (frac == 0.0) return log_table_[k];
  return log_table_[k] + frac * (log_table_[k + 1] - log_table_[k]);
}

double Schedule::gamma(double tau) const {
  check_tau(tau);
  const double fl = std::floor(tau);
  if (tau == fl) return table_[static_cast<std::size_t>(fl)];
  return std::exp(log_gamma(tau));
}

double Schedule::beta(double tau) const {
  const double a = gamma(tau);
  return std::sqrt(std::max(0.0, 1.0 - a * a));
}

double Schedule::gamma_inverse(double a) const {
  if (!std::isfinite(a) || a <= 0.0 || a > 1.0) throw DomainError("gamma_inverse: argument outside (0, 1]");
  if (a == 1.0) return 0.0;
  const double la = std::log(a);
  if (la <= log_table_.back()) return static_cast<double>(max_time_);
  // First index whose log-gamma falls strictly below la; the answer lies in [k - 1, k].
  const auto it = std::upper_bound(log_table_.begin(), log_table_.end(), la, std::greater<>());
  const auto k = static_cast<std::size_t>(it - log_table_.begin());
  const double lo = log_table_[k - 1];
  const double hi = log_table_[k];
  const double frac = (la - lo) / (hi - lo);
  return static_cast<double>(k - 1) + std::clamp(frac, 0.0, 1.0);
}

std::pair<std::vector<double>, std::vector<double>> Schedule::maps(const TimeMatrix& tau, std::size_t planes) const {
  std::vector<double> alpha(tau.size());
  std::vector<double> beta(tau.size());
  for (std::size_t i = 0; i < tau.size(); ++i) {
    alpha[i] = gamma(tau[i]);
    beta[i] = std::sqrt(std::max(0.0, 1.0 - alpha[i] * alpha[i]));
  }
  return {expand_planes(alpha, planes), expand_planes(beta, planes)};
}

// --- patterns --------------------------------------------------------------

NoisePatternSpec NoisePatternSpec::non_directional() {
  NoisePatternSpec s = of(PatternKind::Mixed);
  s.mixture = {{PatternKind::Same, 1.0 / 3}, {PatternKind::Independent, 1.0 / 3}, {PatternKind::Periodical, 1.0 / 3}};
  return s;
}

NoisePatternSpec NoisePatternSpec::all() {
  NoisePatternSpec s = of(PatternKind::Mixed);
  s.mixture = {{PatternKind::Same, 0.25},
               {PatternKind::Independent, 0.25},
               {PatternKind::Periodical, 0.25},
               {PatternKind::CarOnly, 0.25}};
  return s;
}

NoisePatternSpec NoisePatternSpec::parse(const std::string& name) {
  if (name == "same") return same();
  if (name == "independent") return independent();
  if (name == "periodical") return periodical();
  if (name == "car-only") return car_only();
  if (name == "non-directional") return non_directional();
  if (name == "all") return all();
  throw DomainError("unknown noise pattern '" + name + "'");
}

std::string NoisePatternSpec::name() const {
  switch (kind) {
    case PatternKind::Same: return "same";
    case PatternKind::Independent: return "independent";
    case PatternKind::Periodical: return "periodical";
    case PatternKind::CarOnly: return "car-only";
    case PatternKind::Mixed: return mixture.size() == 3 ? "non-directional" : "all";
  }
  return "?";
}

void NoisePatternSpec::validate() const {
  if (antenna_period_min < 1 || antenna_period_min > antenna_period_max || subcarrier_period_min < 1 ||
      subcarrier_period_min > subcarrier_period_max)
    throw DomainError("noise pattern: invalid period range");
  if (kind != PatternKind::Mixed) return;
  if (mixture.empty()) throw DomainError("noise pattern: empty mixture");
  double sum = 0.0;
  for (const auto& [k, w] : mixture) {
    if (k == PatternKind::Mixed) throw DomainError("noise pattern: nested mixture");
    if (!(w >= 0.0)) throw DomainError("noise pattern: negative mixture weight");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw DomainError("noise pattern: mixture weights must sum to 1");
}

namespace {

double draw_time(const Schedule& schedule, Rng& rng) {
  return static_cast<double>(rng.integer(0, schedule.max_time() - 1));
}

}  // namespace

TimeMatrix sample_tau_periodic(std::size_t rows, std::size_t cols, std::size_t row_period, std::size_t col_period,
                               const Schedule& schedule, Rng& rng) {
  if (row_period == 0 || col_period == 0) throw DomainError("periodic tau: zero period");
  RealGrid tile(row_period, col_period);
  for (std::size_t i = 0; i < tile.size(); ++i) tile[i] = draw_time(schedule, rng);
  TimeMatrix tau(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) tau(r, c) = tile(r % row_period, c % col_period);
  return tau;
}

TimeMatrix sample_tau(const NoisePatternSpec& spec, std::size_t rows, std::size_t cols, const Schedule& schedule,
                      Rng& rng) {
  if (rows == 0 || cols == 0) throw ShapeError("sample_tau: empty shape");
  spec.validate();
  TimeMatrix tau(rows, cols);
  switch (spec.kind) {
    case PatternKind::Same: {
      const double x = draw_time(schedule, rng);
      for (std::size_t i = 0; i < tau.size(); ++i) tau[i] = x;
      return tau;
    }
    case PatternKind::Independent:
      for (std::size_t i = 0; i < tau.size(); ++i) tau[i] = draw_time(schedule, rng);
      return tau;
    case PatternKind::Periodical: {
      const auto clamp_dim = [](int v, std::size_t dim) {
        return static_cast<std::int64_t>(std::min<std::size_t>(static_cast<std::size_t>(v), dim));
      };
      const auto rp = rng.integer(clamp_dim(spec.antenna_period_min, rows), clamp_dim(spec.antenna_period_max, rows));
      const auto cp =
          rng.integer(clamp_dim(spec.subcarrier_period_min, cols), clamp_dim(spec.subcarrier_period_max, cols));
      return sample_tau_periodic(rows, cols, static_cast<std::size_t>(rp), static_cast<std::size_t>(cp), schedule,
                                 rng);
    }
    case PatternKind::CarOnly:
      for (std::size_t c = 0; c < cols; ++c) {
        const double x = draw_time(schedule, rng);
        for (std::size_t r = 0; r < rows; ++r) tau(r, c) = x;
      }
      return tau;
    case PatternKind::Mixed: {
      const double u = rng.uniform();
      double acc = 0.0;
      PatternKind chosen = spec.mixture.back().first;
      for (const auto& [k, w] : spec.mixture) {
        acc += w;
        if (u < acc) {
          chosen = k;
          break;
        }
      }
      NoisePatternSpec inner = spec;
      inner.kind = chosen;
      inner.mixture.clear();
      return sample_tau(inner, rows, cols, schedule, rng);
    }
  }
  return tau;
}

// --- stepping --------------------------------------------------------------

TimeMatrix step_uniform(const TimeMatrix& tau, const TimeMatrix& tau0, int steps) {
  if (!tau.same_shape(tau0)) throw ShapeError("step_uniform: tau and tau0 differ in shape");
  if (steps < 1) throw DomainError("step_uniform: steps must be >= 1");
  TimeMatrix next(tau.rows(), tau.cols());
  for (std::size_t i = 0; i < tau.size(); ++i) next[i] = std::max(0.0, tau[i] - tau0[i] / steps);
  return next;
}

double water_level(std::span<const double> v, double budget) {
  if (budget < 0.0) throw DomainError("waterfilling: negative budget");
  if (budget == 0.0 || v.empty()) return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end());
  std::vector<double> sorted(v.begin(), v.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const double mass = total(sorted);
  if (budget > mass * (1.0 + 1e-12) + 1e-12) throw DomainError("waterfilling: budget exceeds total mass");
  // Lowering the level across [sorted[k], sorted[k-1]] removes prefix(k) - k * L.
  long double prefix = 0.0L;
  for (std::size_t k = 1; k <= sorted.size(); ++k) {
    prefix += sorted[k - 1];
    const double floor_level = k < sorted.size() ? sorted[k] : 0.0;
    if (prefix - static_cast<long double>(k) * floor_level < budget) continue;
    const auto kk = static_cast<long double>(k);
    double level = std::max(0.0, static_cast<double>((prefix - budget) / kk));
    // Pick the representable neighbour whose removed mass is closest to budget.
    auto miss = [&](double l) { return std::abs(prefix - kk * l - budget); };
    for (double c : {std::nextafter(level, 0.0), std::nextafter(level, sorted[0])})
      if (c >= floor_level && c <= sorted[k - 1] && miss(c) < miss(level)) level = c;
    return level;
  }
  return 0.0;
}

TimeMatrix step_waterfilling(const TimeMatrix& tau, double budget) {
  const double level = water_level(tau.values(), budget);
  TimeMatrix next(tau.rows(), tau.cols());
  for (std::size_t i = 0; i < tau.size(); ++i) next[i] = std::min(tau[i], level);
  return next;
}

TimeMatrix step_hybrid(const TimeMatrix& tau, const TimeMatrix& tau0, int steps, double eps) {
  if (!(eps >= 0.0 && eps <= 1.0)) throw DomainError("step_hybrid: eps outside [0, 1]");
  const TimeMatrix uniform = step_uniform(tau, tau0, steps);
  const double budget = std::min(total(tau0.values()) / steps, total(tau.values()));
  const TimeMatrix filled = step_waterfilling(tau, budget);
  TimeMatrix next(tau.rows(), tau.cols());
  for (std::size_t i = 0; i < tau.size(); ++i) next[i] = eps * uniform[i] + (1.0 - eps) * filled[i];
  return next;
}

TimeMatrix step_alpha_domain(const TimeMatrix& tau, const TimeMatrix& tau0, int steps, double eps,
                             const Schedule& schedule) {
  if (!tau.same_shape(tau0)) throw ShapeError("step_alpha_domain: tau and tau0 differ in shape");
  if (steps < 1) throw DomainError("step_alpha_domain: steps must be >= 1");
  if (!(eps >= 0.0 && eps <= 1.0)) throw DomainError("step_alpha_domain: eps outside [0, 1]");
  const std::size_t n = tau.size();
  std::vector<double> alpha(n), deficit(n);
  double budget = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    alpha[i] = schedule.gamma(tau[i]);
    deficit[i] = 1.0 - alpha[i];
    budget += (1.0 - schedule.gamma(tau0[i])) / steps;
  }
  budget = std::min(budget, total(deficit));
  const double level = water_level(deficit, budget);
  TimeMatrix next(tau.rows(), tau.cols());
  for (std::size_t i = 0; i < n; ++i) {
    const double linear = std::min(1.0, alpha[i] + (1.0 - schedule.gamma(tau0[i])) / steps);
    const double filled = 1.0 - std::min(deficit[i], level);
    const double a = eps * linear + (1.0 - eps) * filled;
    if (a <= alpha[i]) {
      next[i] = tau[i];
    } else {
      next[i] = std::min(tau[i], schedule.gamma_inverse(std::min(1.0, a)));
    }
  }
  return next;
}

SteppingRule SteppingRule::parse(const std::string& name) {
  SteppingRule rule;
  std::string rest;
  if (name.rfind("tau-", 0) == 0) {
    rule.domain = StepDomain::Tau;
    rest = name.substr(4);
  } else if (name.rfind("alpha-", 0) == 0) {
    rule.domain = StepDomain::Alpha;
    rest = name.substr(6);
  } else {
    throw DomainError("unknown stepping rule '" + name + "'");
  }
  if (rest == "linear") {
    rule.eps = 1.0;
  } else if (rest == "waterfilling") {
    rule.eps = 0.0;
  } else if (rest.rfind("hybrid:", 0) == 0) {
    try {
      rule.eps = std::stod(rest.substr(7));
    } catch (const std::exception&) {
      throw DomainError("bad hybrid weight in '" + name + "'");
    }
    if (!(rule.eps >= 0.0 && rule.eps <= 1.0)) throw DomainError("hybrid weight outside [0, 1] in '" + name + "'");
  } else {
    throw DomainError("unknown stepping rule '" + name + "'");
  }
  return rule;
}

std::string SteppingRule::name() const {
  const std::string prefix = domain == StepDomain::Tau ? "tau-" : "alpha-";
  if (eps == 1.0) return prefix + "linear";
  if (eps == 0.0) return prefix + "waterfilling";
  char buf[32];
  std::snprintf(buf, sizeof buf, "hybrid:%g", eps);
  return prefix + buf;
}

std::vector<SteppingRule> SteppingRule::sweep() {
  std::vector<SteppingRule> rules;
  for (auto d : {StepDomain::Tau, StepDomain::Alpha})
    for (double e : {1.0, 0.7, 0.5, 0.3, 0.0}) rules.push_back({d, e});
  return rules;
}

Stepper::Stepper(SteppingRule rule, const Schedule& schedule, TimeMatrix tau0, int steps)
    : rule_(rule), schedule_(&schedule), tau0_(std::move(tau0)), steps_(steps) {
  if (steps < 1) throw DomainError("stepper: steps must be >= 1");
  if (!(rule.eps >= 0.0 && rule.eps <= 1.0)) throw DomainError("stepper: eps outside [0, 1]");
}

TimeMatrix Stepper::next(const TimeMatrix& tau) {
  ++taken_;
  if (taken_ >= steps_) return TimeMatrix(tau.rows(), tau.cols());
  if (rule_.domain == StepDomain::Tau) return step_hybrid(tau, tau0_, steps_, rule_.eps);
  return step_alpha_domain(tau, tau0_, steps_, rule_.eps, *schedule_);
}

}  // namespace nid
