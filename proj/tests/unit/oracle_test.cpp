#include <doctest.h>

#include <cmath>
#include <algorithm>
#include <numbers>

#include <json.hpp>

#include "nid/oracle.hpp"

using namespace nid;

namespace {

// E[H0 | h] for a one-dimensional GMM by trapezoid quadrature.
double quadrature_posterior_mean(double h, double a, double b, const GmmPrior& prior) {
  double num = 0.0, den = 0.0;
  const double dx = 1e-4;
  for (double x = -8.0; x <= 8.0; x += dx) {
    double p = 0.0;
    for (std::size_t k = 0; k < prior.components(); ++k) {
      const double z = (x - prior.means[k][0]) / prior.sigma0;
      p += prior.weights[k] * std::exp(-0.5 * z * z) / prior.sigma0;
    }
    const double r = (h - a * x) / b;
    const double w = p * std::exp(-0.5 * r * r);
    num += x * w;
    den += w;
  }
  return num / den;
}

SampleSet normal_set(std::size_t n, double mean, Rng& rng) {
  SampleSet s(1);
  for (std::size_t i = 0; i < n; ++i) s.push(std::vector<double>{mean + rng.normal()});
  return s;
}

}  // namespace

TEST_CASE("gmm denoiser limits") {
  const auto prior = GmmPrior::reference(2);
  const std::vector<double> h{0.37, -1.2};
  const auto exact = gmm_denoiser(h, std::vector<double>{1, 1}, std::vector<double>{0, 0}, prior);
  CHECK(exact[0] == doctest::Approx(h[0]).epsilon(1e-15));
  CHECK(exact[1] == doctest::Approx(h[1]).epsilon(1e-15));
  const Schedule s;
  const double a = s.gamma(1000), b = s.beta(1000);
  const auto far = gmm_denoiser(h, std::vector<double>{a, a}, std::vector<double>{b, b}, prior);
  CHECK(std::abs(far[0] - prior.mean(0)) < 1e-9);
  CHECK(std::abs(far[1] - prior.mean(1)) < 1e-9);
}

TEST_CASE("gmm denoiser matches quadrature and the single-Gaussian formula") {
  const GmmPrior mix{{0.3, 0.7}, {{-1.0}, {1.5}}, 0.4};
  for (double h : {-2.0, -0.3, 0.0, 0.8, 2.5})
    for (double a : {0.2, 0.6, 0.95}) {
      const double b = std::sqrt(1 - a * a);
      const double got = gmm_denoiser(std::vector<double>{h}, std::vector<double>{a}, std::vector<double>{b}, mix)[0];
      CHECK(got == doctest::Approx(quadrature_posterior_mean(h, a, b, mix)).epsilon(1e-7));
    }

  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> m(3), h(3), a(3), b(3);
    for (int i = 0; i < 3; ++i) {
      m[i] = rng.normal();
      h[i] = rng.normal();
      a[i] = rng.uniform(0.01, 0.99);
      b[i] = std::sqrt(1 - a[i] * a[i]);
    }
    const double s0 = rng.uniform(0.1, 2.0);
    const auto got = gmm_denoiser(h, a, b, GmmPrior::gaussian(m, s0));
    for (int i = 0; i < 3; ++i) {
      const double expect = m[i] + a[i] * s0 * s0 / (a[i] * a[i] * s0 * s0 + b[i] * b[i]) * (h[i] - a[i] * m[i]);
      CHECK(std::abs(got[i] - expect) < 1e-12 * std::max(1.0, std::abs(expect)));
    }
  }
}

TEST_CASE("gmm denoiser is permutation equivariant") {
  GmmPrior prior{{0.5, 0.5}, {{-1.0, 0.5, 2.0}, {1.0, -0.5, 0.0}}, 0.3};
  const std::vector<double> h{0.2, -0.4, 1.0}, a{0.3, 0.7, 0.5}, b{0.95, 0.71, 0.87};
  const auto base = gmm_denoiser(h, a, b, prior);
  const int perm[3] = {2, 0, 1};
  GmmPrior permuted = prior;
  std::vector<double> hp(3), ap(3), bp(3);
  for (int i = 0; i < 3; ++i) {
    hp[i] = h[perm[i]];
    ap[i] = a[perm[i]];
    bp[i] = b[perm[i]];
    for (int k = 0; k < 2; ++k) permuted.means[k][i] = prior.means[k][perm[i]];
  }
  const auto out = gmm_denoiser(hp, ap, bp, permuted);
  for (int i = 0; i < 3; ++i) CHECK(out[i] == doctest::Approx(base[perm[i]]).epsilon(1e-14));
}

TEST_CASE("prior validation") {
  CHECK_THROWS_AS((GmmPrior{{0.4, 0.4}, {{0.0}, {1.0}}, 0.3}.validate()), DomainError);
  CHECK_THROWS_AS((GmmPrior{{1.0}, {{0.0}}, 0.0}.validate()), DomainError);
  CHECK_NOTHROW(GmmPrior::reference(4).validate());
}

TEST_CASE("forward sde") {
  SUBCASE("one substep is the closed-form transition") {
    const std::vector<double> h0{0.5, -1.0};
    const AlphaPath path{{1.0, 1.0}, {0.6, 0.3}};
    Rng r1(3), r2(3);
    const auto out = simulate_forward_sde(h0, path, r1);
    for (int i = 0; i < 2; ++i) {
      const double xi = r2.normal();
      CHECK(out[i] == doctest::Approx(path[1][i] * h0[i] + std::sqrt(1 - path[1][i] * path[1][i]) * xi).epsilon(1e-15));
    }
  }
  SUBCASE("two substeps compose to one") {
    Rng rng(4);
    std::vector<double> one, two;
    for (int n = 0; n < 10000; ++n) {
      const std::vector<double> h0{rng.uniform(-1.0, 1.0)};
      one.push_back(simulate_forward_sde(h0, {{1.0}, {0.3}}, rng)[0]);
      two.push_back(simulate_forward_sde(h0, {{1.0}, {0.6}, {0.3}}, rng)[0]);
    }
    CHECK(ks_statistic(one, two) < 0.02);
  }
  SUBCASE("non-identical path has variance 1 - alpha^2 per element") {
    const Schedule s;
    const std::vector<double> tau{400.0, 60.0};
    const auto path = make_alpha_path(tau, 100, s);
    Rng rng(5);
    SampleSet out(2);
    for (int n = 0; n < 10000; ++n) out.push(simulate_forward_sde(std::vector<double>{0.0, 0.0}, path, rng));
    const auto& a = path.back();
    const std::vector<double> zero{0.0, 0.0}, var{1 - a[0] * a[0], 1 - a[1] * a[1]};
    CHECK(check_moments(out, zero, var).max_abs_z() < 3.0);
  }
  SUBCASE("euler scheme stays close for fine paths") {
    const Schedule s;
    const auto path = make_alpha_path(std::vector<double>{150.0}, 400, s);
    Rng rng(6);
    SampleSet out(1);
    for (int n = 0; n < 10000; ++n) out.push(simulate_forward_sde(std::vector<double>{0.0}, path, rng, SdeScheme::EulerMaruyama));
    const double a = path.back()[0];
    CHECK(check_moments(out, std::vector<double>{0.0}, std::vector<double>{1 - a * a}).max_abs_z() < 4.0);
  }
  CHECK_THROWS_AS(simulate_forward_sde(std::vector<double>{0.0}, {{0.5}, {0.8}}, *std::make_unique<Rng>(1)), DomainError);
}

TEST_CASE("energy distance calibration") {
  Rng rng(7);
  const auto x = normal_set(10000, 0.0, rng);
  const auto y = normal_set(10000, 0.0, rng);
  const auto z = normal_set(10000, 3.0, rng);
  CHECK(energy_distance(x, x) == 0.0);
  CHECK(energy_distance(x, y) < 0.02);
  CHECK(energy_distance(x, y) == doctest::Approx(energy_distance(y, x)).epsilon(1e-12));
  CHECK(energy_distance(x, z) > 1.0);
  CHECK_THROWS_AS(energy_distance(x, SampleSet(2)), DomainError);
}

TEST_CASE("ks statistic") {
  CHECK(ks_statistic({1, 2, 3}, {1, 2, 3}) == 0.0);
  CHECK(ks_statistic({1, 2}, {3, 4}) == 1.0);
  CHECK(ks_statistic({1, 2, 3, 4}, {3, 4, 5, 6}) == doctest::Approx(0.5));
}

namespace {

struct GaussianRun {
  std::vector<double> mean, var;
};

GaussianRun run_gaussian(const GmmPrior& prior, const TimeMatrix& tau0, const GenerateOptions& opt, int n,
                         std::uint64_t seed) {
  const Schedule s;
  const GmmDenoiser denoiser(prior);
  const auto [alpha, beta] = s.maps(tau0, 1);
  Rng rng(seed);
  SampleSet out(prior.dim());
  for (int i = 0; i < n; ++i) {
    const auto h0 = prior.sample(rng);
    std::vector<double> g(h0.size());
    for (std::size_t j = 0; j < g.size(); ++j) g[j] = alpha[j] * h0[j] + beta[j] * rng.normal();
    out.push(generate(denoiser, s, g, tau0, opt, rng).sample);
  }
  GaussianRun r;
  for (std::size_t j = 0; j < prior.dim(); ++j) {
    const auto col = out.marginal(j);
    double m = 0.0, v = 0.0;
    for (double x : col) m += x;
    m /= n;
    for (double x : col) v += (x - m) * (x - m);
    r.mean.push_back(m);
    r.var.push_back(v / (n - 1));
  }
  return r;
}

// Exact output variance of the hybrid update for a centred Gaussian prior,
// propagated through the same time path the sampler takes.
std::vector<double> hybrid_variance(double s2, const TimeMatrix& tau0, const GenerateOptions& opt) {
  const Schedule s;
  Stepper stepper(opt.stepping, s, tau0, opt.steps);
  TimeMatrix tau = tau0;
  std::vector<double> v(tau0.size());
  for (std::size_t j = 0; j < v.size(); ++j) {
    const double a = s.gamma(tau[j]);
    v[j] = a * a * s2 + 1 - a * a;
  }
  const double e = opt.eps_hybrid;
  while (!std::all_of(tau.values().begin(), tau.values().end(), [](double t) { return t == 0.0; })) {
    const TimeMatrix next = stepper.next(tau);
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (tau[j] == 0.0) continue;
      const double a = s.gamma(tau[j]), b = s.beta(tau[j]);
      const double an = s.gamma(next[j]), bn = s.beta(next[j]);
      const double gain = a * s2 / (a * a * s2 + b * b);
      const double c = (an - e * a * bn / b) * gain + e * bn / b;
      v[j] = c * c * v[j] + (1 - e * e) * bn * bn;
    }
    tau = next;
  }
  return v;
}

}  // namespace

TEST_CASE("reverse process on a single Gaussian prior") {
  const auto prior = GmmPrior::gaussian({0.5, -0.25}, 0.7);
  const TimeMatrix tau0(1, 2, std::vector<double>{300.0, 80.0});
  constexpr int n = 6000;
  GenerateOptions opt;
  opt.steps = 200;
  opt.stepping = SteppingRule::parse("tau-waterfilling");

  SUBCASE("deterministic update recovers the prior moments") {
    opt.eps_hybrid = 1.0;
    const auto r = run_gaussian(prior, tau0, opt, n, 8);
    for (int j = 0; j < 2; ++j) {
      CHECK(std::abs(r.mean[j] - prior.means[0][j]) < 3.0 * prior.sigma0 / std::sqrt(double(n)));
      CHECK(r.var[j] == doctest::Approx(prior.sigma0 * prior.sigma0).epsilon(0.05));
    }
  }
  SUBCASE("stochastic update follows the closed-form variance recursion") {
    opt.eps_hybrid = 0.4;
    const auto r = run_gaussian(prior, tau0, opt, n, 9);
    const auto expect = hybrid_variance(prior.sigma0 * prior.sigma0, tau0, opt);
    for (int j = 0; j < 2; ++j) {
      CHECK(std::abs(r.mean[j] - prior.means[0][j]) < 3.0 * prior.sigma0 / std::sqrt(double(n)));
      CHECK(r.var[j] == doctest::Approx(expect[j]).epsilon(0.05));
      CHECK(expect[j] < 0.9 * prior.sigma0 * prior.sigma0);
    }
  }
}

TEST_CASE("theorem 2 check catches a biased denoiser and passes the degenerate start") {
  const Schedule s;
  Theorem2Config config;
  config.n_samples = 1500;
  config.steps = 40;
  config.eps_hybrid = {1.0};
  config.rules = {SteppingRule::parse("tau-linear")};
  config.starts = {{0.0, 0.0}};
  const auto degenerate = check_theorem2(config, s);
  CHECK(degenerate.passed);
  CHECK(degenerate.cases.front().identity);

  config.starts = {{500.0, 250.0}};
  config.denoiser_bias = 1.0;
  const auto biased = check_theorem2(config, s);
  CHECK_FALSE(biased.passed);
  CHECK(biased.cases.front().moments.max_abs_z() > 10.0);

  const auto doc = nlohmann::ordered_json::parse(to_json(biased, config));
  CHECK(doc.begin().key() == "check");
  CHECK(doc["passed"] == false);
  CHECK(doc["cases"].size() == 1);
}
