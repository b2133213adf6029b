#include "nid/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <json.hpp>

namespace nid {

void SampleSet::push(std::span<const double> x) {
  if (x.size() != dim) throw ShapeError("sample set: dimension mismatch");
  data.insert(data.end(), x.begin(), x.end());
}

std::vector<double> SampleSet::marginal(std::size_t j) const {
  std::vector<double> out(size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = data[i * dim + j];
  return out;
}

// --- prior -----------------------------------------------------------------

void GmmPrior::validate() const {
  if (means.empty() || weights.size() != means.size()) throw DomainError("gmm: weights and means disagree");
  if (!(sigma0 > 0.0)) throw DomainError("gmm: sigma0 must be positive");
  double sum = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw DomainError("gmm: negative weight");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-12) throw DomainError("gmm: weights must sum to 1");
  for (const auto& m : means)
    if (m.size() != dim()) throw DomainError("gmm: means differ in dimension");
}

std::vector<double> GmmPrior::sample(Rng& rng) const {
  const double u = rng.uniform();
  std::size_t k = components() - 1;
  double acc = 0.0;
  for (std::size_t j = 0; j < components(); ++j) {
    acc += weights[j];
    if (u < acc) {
      k = j;
      break;
    }
  }
  std::vector<double> x(dim());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = means[k][i] + sigma0 * rng.normal();
  return x;
}

SampleSet GmmPrior::sample(std::size_t n, Rng& rng) const {
  SampleSet set(dim());
  set.data.reserve(n * dim());
  for (std::size_t i = 0; i < n; ++i) set.push(sample(rng));
  return set;
}

double GmmPrior::mean(std::size_t j) const {
  double m = 0.0;
  for (std::size_t k = 0; k < components(); ++k) m += weights[k] * means[k][j];
  return m;
}

double GmmPrior::second_moment(std::size_t j) const {
  double m = 0.0;
  for (std::size_t k = 0; k < components(); ++k) m += weights[k] * (means[k][j] * means[k][j] + sigma0 * sigma0);
  return m;
}

double GmmPrior::fourth_moment(std::size_t j) const {
  const double s2 = sigma0 * sigma0;
  double m = 0.0;
  for (std::size_t k = 0; k < components(); ++k) {
    const double mu = means[k][j];
    m += weights[k] * (mu * mu * mu * mu + 6.0 * mu * mu * s2 + 3.0 * s2 * s2);
  }
  return m;
}

GmmPrior GmmPrior::reference(std::size_t dim) {
  return {{0.5, 0.5}, {std::vector<double>(dim, -1.0), std::vector<double>(dim, 1.0)}, 0.3};
}

GmmPrior GmmPrior::gaussian(std::vector<double> mean, double sigma0) { return {{1.0}, {std::move(mean)}, sigma0}; }

// --- denoiser --------------------------------------------------------------

std::vector<double> gmm_denoiser(std::span<const double> h, std::span<const double> alpha,
                                 std::span<const double> beta, const GmmPrior& prior) {
  require_same_size(h, alpha, "gmm_denoiser");
  require_same_size(h, beta, "gmm_denoiser");
  if (h.size() != prior.dim()) throw ShapeError("gmm_denoiser: prior dimension mismatch");
  const std::size_t d = h.size();
  const std::size_t K = prior.components();
  const double s2 = prior.sigma0 * prior.sigma0;

  std::vector<double> var(d);
  for (std::size_t i = 0; i < d; ++i) var[i] = alpha[i] * alpha[i] * s2 + beta[i] * beta[i];

  std::vector<double> log_r(K);
  for (std::size_t k = 0; k < K; ++k) {
    double lp = prior.weights[k] > 0.0 ? std::log(prior.weights[k]) : -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < d; ++i) {
      const double diff = h[i] - alpha[i] * prior.means[k][i];
      lp -= 0.5 * (diff * diff / var[i] + std::log(var[i]));
    }
    log_r[k] = lp;
  }
  const double top = *std::max_element(log_r.begin(), log_r.end());
  if (!std::isfinite(top)) throw DomainError("gmm_denoiser: all responsibilities vanished");
  double norm = 0.0;
  for (double& lr : log_r) {
    lr = std::exp(lr - top);
    norm += lr;
  }

  std::vector<double> out(d, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    const double r = log_r[k] / norm;
    if (r == 0.0) continue;
    for (std::size_t i = 0; i < d; ++i) {
      const double m = prior.means[k][i];
      const double gain = alpha[i] * s2 / var[i];
      out[i] += r * (m + gain * (h[i] - alpha[i] * m));
    }
  }
  return out;
}

std::vector<double> GmmDenoiser::denoise(const DenoiserQuery& query) const {
  auto out = gmm_denoiser(query.state, query.alpha, query.beta, prior_);
  if (bias_ != 0.0)
    for (double& x : out) x += bias_;
  return out;
}

// --- forward SDE -----------------------------------------------------------

AlphaPath make_alpha_path(std::span<const double> tau_final, int n_substeps, const Schedule& schedule) {
  if (n_substeps < 1) throw DomainError("alpha path: need at least one substep");
  AlphaPath path(static_cast<std::size_t>(n_substeps) + 1, std::vector<double>(tau_final.size()));
  for (int k = 0; k <= n_substeps; ++k) {
    const double s = static_cast<double>(k) / n_substeps;
    for (std::size_t i = 0; i < tau_final.size(); ++i)
      path[static_cast<std::size_t>(k)][i] = schedule.gamma(k == n_substeps ? tau_final[i] : s * tau_final[i]);
  }
  return path;
}

std::vector<double> simulate_forward_sde(std::span<const double> h0, const AlphaPath& path, Rng& rng,
                                         SdeScheme scheme) {
  if (path.size() < 2) throw DomainError("forward sde: path needs at least two points");
  for (const auto& a : path) {
    if (a.size() != h0.size()) throw ShapeError("forward sde: path dimension mismatch");
    for (double x : a)
      if (!(x > 0.0 && x <= 1.0)) throw DomainError("forward sde: alpha outside (0, 1]");
  }
  for (std::size_t k = 1; k < path.size(); ++k)
    for (std::size_t i = 0; i < h0.size(); ++i)
      if (path[k][i] > path[k - 1][i]) throw DomainError("forward sde: alpha path is not monotone");

  std::vector<double> h(h0.begin(), h0.end());
  for (std::size_t k = 1; k < path.size(); ++k) {
    for (std::size_t i = 0; i < h.size(); ++i) {
      const double ratio = path[k][i] / path[k - 1][i];
      const double xi = rng.normal();
      if (scheme == SdeScheme::ExactTransition) {
        h[i] = ratio * h[i] + std::sqrt(std::max(0.0, 1.0 - ratio * ratio)) * xi;
      } else {
        const double dlog = std::log(ratio);
        h[i] += dlog * h[i] + std::sqrt(-2.0 * dlog) * xi;
      }
    }
  }
  return h;
}

// --- statistics ------------------------------------------------------------

namespace {

double distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

double mean_cross_distance(const SampleSet& x, const SampleSet& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < y.size(); ++j) row += distance(x.row(i), y.row(j));
    s += row;
  }
  return s / (static_cast<double>(x.size()) * static_cast<double>(y.size()));
}

// Same sum as mean_cross_distance(x, x), visiting each unordered pair once.
double mean_self_distance(const SampleSet& x) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double row = 0.0;
    for (std::size_t j = i + 1; j < x.size(); ++j) row += distance(x.row(i), x.row(j));
    s += row;
  }
  const double n = static_cast<double>(x.size());
  return 2.0 * s / (n * n);
}

}  // namespace

double energy_distance(const SampleSet& x, const SampleSet& y) {
  if (x.size() == 0 || y.size() == 0) throw DomainError("energy distance: empty sample set");
  if (x.dim != y.dim) throw ShapeError("energy distance: dimension mismatch");
  if (x.data == y.data) return 0.0;
  const double e = 2.0 * mean_cross_distance(x, y) - mean_self_distance(x) - mean_self_distance(y);
  return std::max(0.0, e);
}

double ks_statistic(std::vector<double> x, std::vector<double> y) {
  if (x.empty() || y.empty()) throw DomainError("ks: empty sample");
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  const double nx = static_cast<double>(x.size()), ny = static_cast<double>(y.size());
  while (i < x.size() && j < y.size()) {
    const double v = std::min(x[i], y[j]);
    while (i < x.size() && x[i] == v) ++i;
    while (j < y.size() && y[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / nx - static_cast<double>(j) / ny));
  }
  return d;
}

double MomentCheck::max_abs_z() const {
  double m = 0.0;
  for (double z : mean_z) m = std::max(m, std::abs(z));
  for (double z : second_z) m = std::max(m, std::abs(z));
  return m;
}

MomentCheck check_moments(const SampleSet& samples, std::span<const double> target_mean,
                          std::span<const double> target_second) {
  if (target_mean.size() != samples.dim || target_second.size() != samples.dim)
    throw ShapeError("moment check: dimension mismatch");
  MomentCheck out;
  const double n = static_cast<double>(samples.size());
  for (std::size_t j = 0; j < samples.dim; ++j) {
    double s1 = 0.0, s2 = 0.0, s4 = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const double x = samples.data[i * samples.dim + j];
      s1 += x;
      s2 += x * x;
      s4 += x * x * x * x;
    }
    const double m1 = s1 / n, m2 = s2 / n, m4 = s4 / n;
    const double se1 = std::sqrt(std::max(m2 - m1 * m1, 1e-300) / n);
    const double se2 = std::sqrt(std::max(m4 - m2 * m2, 1e-300) / n);
    out.mean_z.push_back((m1 - target_mean[j]) / se1);
    out.second_z.push_back((m2 - target_second[j]) / se2);
  }
  return out;
}

// --- theorem checks --------------------------------------------------------

Theorem1Report check_theorem1(const Theorem1Config& config, const Schedule& schedule) {
  config.prior.validate();
  const std::size_t d = config.prior.dim();
  if (config.tau_final.size() != d) throw ShapeError("theorem 1 check: tau dimension mismatch");
  const AlphaPath path = make_alpha_path(config.tau_final, config.n_substeps, schedule);
  const auto& alpha = path.back();

  Rng rng_sde = Rng::stream(config.seed, 1);
  Rng rng_direct = Rng::stream(config.seed, 2);
  SampleSet simulated(d), direct(d);
  for (std::size_t n = 0; n < config.n_samples; ++n) {
    simulated.push(simulate_forward_sde(config.prior.sample(rng_sde), path, rng_sde, config.scheme));
    const auto h0 = config.prior.sample(rng_direct);
    std::vector<double> x(d);
    for (std::size_t i = 0; i < d; ++i)
      x[i] = alpha[i] * h0[i] + std::sqrt(1.0 - alpha[i] * alpha[i]) * rng_direct.normal();
    direct.push(x);
  }

  std::vector<double> mean(d), second(d);
  for (std::size_t i = 0; i < d; ++i) {
    mean[i] = alpha[i] * config.prior.mean(i);
    second[i] = alpha[i] * alpha[i] * config.prior.second_moment(i) + (1.0 - alpha[i] * alpha[i]);
  }
  Theorem1Report report;
  report.energy = energy_distance(simulated, direct);
  report.moments = check_moments(simulated, mean, second);
  for (std::size_t i = 0; i < d; ++i) report.ks.push_back(ks_statistic(simulated.marginal(i), direct.marginal(i)));
  report.passed = report.energy < config.energy_tolerance && report.moments.max_abs_z() <= config.z_tolerance;
  return report;
}

Theorem2Report check_theorem2(const Theorem2Config& config, const Schedule& schedule) {
  config.prior.validate();
  const std::size_t d = config.prior.dim();
  const GmmDenoiser denoiser(config.prior, config.denoiser_bias);

  std::vector<double> mean(d), second(d);
  for (std::size_t i = 0; i < d; ++i) {
    mean[i] = config.prior.mean(i);
    second[i] = config.prior.second_moment(i);
  }

  Rng reference_rng = Rng::stream(config.seed, 0);
  const SampleSet reference = config.prior.sample(config.n_samples, reference_rng);

  Theorem2Report report;
  report.passed = true;
  std::uint64_t stream = 1;
  for (const auto& start : config.starts) {
    if (start.size() != d) throw ShapeError("theorem 2 check: start dimension mismatch");
    const TimeMatrix tau0(1, d, start);
    const bool degenerate = std::all_of(start.begin(), start.end(), [](double t) { return t == 0.0; });
    const auto [alpha0, beta0] = schedule.maps(tau0, 1);

    for (double eps : config.eps_hybrid) {
      std::vector<SampleSet> outputs;
      for (const auto& rule : config.rules) {
        // Every rule starts from the same initial draws.
        Rng init_rng = Rng::stream(config.seed, 1000);
        Rng gen_rng = Rng::stream(config.seed, ++stream);
        GenerateOptions options;
        options.steps = config.steps;
        options.stepping = rule;
        options.eps_hybrid = eps;
        options.norm = NormalizationMode::IdenticalTotalPower;
        SampleSet out(d);
        out.data.reserve(config.n_samples * d);
        bool identity = true;
        for (std::size_t n = 0; n < config.n_samples; ++n) {
          const auto h0 = config.prior.sample(init_rng);
          std::vector<double> g(d);
          for (std::size_t i = 0; i < d; ++i) g[i] = alpha0[i] * h0[i] + beta0[i] * init_rng.normal();
          const auto result = generate(denoiser, schedule, g, tau0, options, gen_rng);
          identity = identity && result.sample == g;
          out.push(result.sample);
        }
        Theorem2Case c;
        c.start = start;
        c.rule = rule.name();
        c.eps = eps;
        c.energy = energy_distance(out, reference);
        c.moments = check_moments(out, mean, second);
        c.identity = degenerate && identity;
        c.passed = degenerate ? identity
                              : c.energy < config.energy_tolerance && c.moments.max_abs_z() <= config.z_tolerance;
        report.passed = report.passed && c.passed;
        report.cases.push_back(std::move(c));
        outputs.push_back(std::move(out));
      }
      for (std::size_t a = 0; a < outputs.size(); ++a)
        for (std::size_t b = a + 1; b < outputs.size(); ++b) {
          Theorem2Pair p;
          p.start = start;
          p.eps = eps;
          p.rule_a = config.rules[a].name();
          p.rule_b = config.rules[b].name();
          p.energy = energy_distance(outputs[a], outputs[b]);
          p.passed = p.energy < config.pairwise_tolerance;
          report.passed = report.passed && p.passed;
          report.pairs.push_back(std::move(p));
        }
    }
  }
  return report;
}

// --- reports ---------------------------------------------------------------

namespace {

using ojson = nlohmann::ordered_json;

ojson moments_json(const MomentCheck& m) {
  ojson j;
  j["mean_z"] = m.mean_z;
  j["second_moment_z"] = m.second_z;
  j["max_abs_z"] = m.max_abs_z();
  return j;
}

}  // namespace

std::string to_json(const Theorem1Report& report, const Theorem1Config& config) {
  ojson j;
  j["check"] = "forward_law";
  j["tau_final"] = config.tau_final;
  j["n_substeps"] = config.n_substeps;
  j["n_samples"] = config.n_samples;
  j["scheme"] = config.scheme == SdeScheme::ExactTransition ? "exact" : "euler";
  j["seed"] = config.seed;
  j["tolerances"] = {{"energy", config.energy_tolerance}, {"z", config.z_tolerance}};
  j["energy_distance"] = report.energy;
  j["moments"] = moments_json(report.moments);
  j["ks"] = report.ks;
  j["passed"] = report.passed;
  return j.dump(2);
}

std::string to_json(const Theorem2Report& report, const Theorem2Config& config) {
  ojson j;
  j["check"] = "reverse_process";
  j["steps"] = config.steps;
  j["n_samples"] = config.n_samples;
  j["seed"] = config.seed;
  j["denoiser_bias"] = config.denoiser_bias;
  j["tolerances"] = {{"energy", config.energy_tolerance},
                     {"pairwise", config.pairwise_tolerance},
                     {"z", config.z_tolerance}};
  ojson cases = ojson::array();
  for (const auto& c : report.cases) {
    ojson cj;
    cj["start"] = c.start;
    cj["rule"] = c.rule;
    cj["eps"] = c.eps;
    cj["energy_distance"] = c.energy;
    cj["moments"] = moments_json(c.moments);
    cj["identity"] = c.identity;
    cj["passed"] = c.passed;
    cases.push_back(std::move(cj));
  }
  j["cases"] = std::move(cases);
  ojson pairs = ojson::array();
  for (const auto& p : report.pairs) {
    ojson pj;
    pj["start"] = p.start;
    pj["eps"] = p.eps;
    pj["rules"] = {p.rule_a, p.rule_b};
    pj["energy_distance"] = p.energy;
    pj["passed"] = p.passed;
    pairs.push_back(std::move(pj));
  }
  j["pairs"] = std::move(pairs);
  j["passed"] = report.passed;
  return j.dump(2);
}

}  // namespace nid
