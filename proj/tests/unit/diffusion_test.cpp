#include <doctest.h>

#include <cmath>

#include "nid/diffusion.hpp"

using namespace nid;

namespace {

std::vector<double> gaussian(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

// Returns the true clean sample regardless of the query.
class KnownCleanDenoiser final : public Denoiser {
 public:
  explicit KnownCleanDenoiser(std::vector<double> h0) : h0_(std::move(h0)) {}
  std::vector<double> denoise(const DenoiserQuery&) const override { return h0_; }

 private:
  std::vector<double> h0_;
};

// Records what it is shown and answers alpha * state.
class RecordingDenoiser final : public Denoiser {
 public:
  mutable std::vector<std::vector<double>> states, inputs;
  std::vector<double> denoise(const DenoiserQuery& q) const override {
    states.emplace_back(q.state.begin(), q.state.end());
    inputs.emplace_back(q.network_input.begin(), q.network_input.end());
    std::vector<double> out(q.state.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = q.alpha[i] * q.state[i];
    return out;
  }
};

}  // namespace

TEST_CASE("forward noise boundaries") {
  const Schedule s;
  Rng rng(1);
  const auto h0 = gaussian(8, rng);
  const auto clean = forward_noise(h0, TimeMatrix(2, 2, 0.0), s, rng);
  CHECK(clean.noisy == h0);
  CHECK(clean.noise.size() == 8);

  // tau = T: the output is uncorrelated with h0.
  double corr = 0.0;
  constexpr int n = 10000;
  for (int i = 0; i < n; ++i) {
    const std::vector<double> x{rng.normal()};
    const auto out = forward_noise(x, TimeMatrix(1, 1, 1000.0), s, rng);
    corr += x[0] * out.noisy[0];
  }
  CHECK(std::abs(corr / n) < 3.0 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("forward noise variance matches beta squared per element") {
  const Schedule s;
  Rng rng(2);
  const TimeMatrix tau(1, 2, std::vector<double>{50.0, 200.0});
  const auto [alpha, beta] = s.maps(tau, 1);
  const std::vector<double> h0{0.7, -1.3};
  constexpr int n = 10000;
  double s2[2] = {0, 0}, s4[2] = {0, 0};
  for (int i = 0; i < n; ++i) {
    const auto out = forward_noise(h0, tau, s, rng);
    for (int j = 0; j < 2; ++j) {
      const double r = out.noisy[j] - alpha[j] * h0[j];
      s2[j] += r * r;
      s4[j] += r * r * r * r;
    }
  }
  for (int j = 0; j < 2; ++j) {
    const double m2 = s2[j] / n;
    const double se = std::sqrt((s4[j] / n - m2 * m2) / n);
    CHECK(std::abs(m2 - beta[j] * beta[j]) < 3.0 * se);
  }
}

TEST_CASE("normalize_input") {
  const std::vector<double> h{1.0, 1.0};
  CHECK(normalize_input(h, std::vector<double>{1.0, 0.5}, NormalizationMode::IdenticalTotalPower) == h);
  const auto out = normalize_input(h, std::vector<double>{1.0, 0.5}, NormalizationMode::IdenticalNoisePower);
  CHECK(out[0] == doctest::Approx(std::sqrt(2.0) / std::sqrt(5.0)).epsilon(1e-15));
  CHECK(out[1] == doctest::Approx(2.0 * std::sqrt(2.0) / std::sqrt(5.0)).epsilon(1e-15));

  Rng rng(3);
  const auto x = gaussian(6, rng);
  const auto uniform = normalize_input(x, std::vector<double>(6, 0.3), NormalizationMode::IdenticalNoisePower);
  for (std::size_t i = 0; i < 6; ++i) CHECK(uniform[i] == doctest::Approx(x[i]).epsilon(1e-14));

  // A clean entry is clamped, never divided by zero.
  const auto clamped = normalize_input(h, std::vector<double>{0.0, 1.0}, NormalizationMode::IdenticalNoisePower);
  CHECK(std::isfinite(clamped[0]));
  CHECK(std::isfinite(clamped[1]));

  // Pure noise with covariance beta^2 comes out with equal power on every
  // element: the harmonic mean of beta^2.
  const std::vector<double> beta{0.2, 0.5, 0.9, 1.0};
  double inv = 0.0;
  for (double b : beta) inv += 1.0 / (b * b);
  const double level = 4.0 / inv;
  std::vector<double> sq(4, 0.0);
  constexpr int n = 20000;
  for (int i = 0; i < n; ++i) {
    std::vector<double> noise(4);
    for (std::size_t j = 0; j < 4; ++j) noise[j] = beta[j] * rng.normal();
    const auto out = normalize_input(noise, beta, NormalizationMode::IdenticalNoisePower);
    for (std::size_t j = 0; j < 4; ++j) sq[j] += out[j] * out[j];
  }
  for (double v : sq) CHECK(v / n == doctest::Approx(level).epsilon(0.04));
}

TEST_CASE("velocity algebra") {
  const std::vector<double> h0{0.3, -2.0}, xi{1.5, 0.25};
  CHECK(velocity_target(h0, xi, std::vector<double>{1, 1}, std::vector<double>{0, 0}) == xi);
  const auto y = velocity_target(h0, xi, std::vector<double>{0, 0}, std::vector<double>{1, 1});
  CHECK(y[0] == -h0[0]);
  CHECK(y[1] == -h0[1]);
  const std::vector<double> g{0.4, 0.8}, a{0.6, 0.8}, b{0.8, 0.6};
  const auto x = recover_x0(g, std::vector<double>{0, 0}, a, b);
  CHECK(x[0] == a[0] * g[0]);
  CHECK(x[1] == a[1] * g[1]);

  const Schedule s;
  Rng rng(4);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    TimeMatrix tau(2, 3);
    for (std::size_t i = 0; i < tau.size(); ++i) tau[i] = rng.uniform(0.0, 1000.0);
    const auto h = gaussian(12, rng);
    const auto [alpha, beta] = s.maps(tau, 2);
    const auto noised = forward_noise(h, alpha, beta, rng);
    const auto back = recover_x0(noised.noisy, velocity_target(h, noised.noise, alpha, beta), alpha, beta);
    for (std::size_t i = 0; i < h.size(); ++i) worst = std::max(worst, std::abs(back[i] - h[i]));
  }
  CHECK(worst < 1e-12);
  CHECK_THROWS_AS(recover_x0(g, std::vector<double>{0.0}, a, b), ShapeError);
}

TEST_CASE("ddim step") {
  Rng rng(5);
  const std::vector<double> g{0.5, -0.2, 1.1}, d{0.4, 0.1, 0.9};
  const std::vector<double> a{0.3, 0.6, 0.9}, an{0.5, 0.7, 0.95};
  std::vector<double> b(3), bn(3);
  for (int i = 0; i < 3; ++i) {
    b[i] = std::sqrt(1 - a[i] * a[i]);
    bn[i] = std::sqrt(1 - an[i] * an[i]);
  }

  SUBCASE("eps = 1 is the vanilla update with no noise") {
    const auto out = ddim_step(g, d, a, b, an, bn, 1.0, rng);
    for (int i = 0; i < 3; ++i)
      CHECK(out[i] == doctest::Approx((an[i] - a[i] * bn[i] / b[i]) * d[i] + bn[i] / b[i] * g[i]).epsilon(1e-15));
  }
  SUBCASE("step to a clean target returns the estimate") {
    const std::vector<double> one(3, 1.0), zero(3, 0.0);
    for (double eps : {0.0, 0.4, 1.0}) CHECK(ddim_step(g, d, a, b, one, zero, eps, rng) == d);
  }
  SUBCASE("clean entries pass through") {
    const std::vector<double> bc{0.0, b[1], b[2]}, ac{1.0, a[1], a[2]};
    const auto out = ddim_step(g, d, ac, bc, ac, bc, 0.4, rng);
    CHECK(out[0] == g[0]);
  }
  SUBCASE("eps = 0 injects noise of power beta_next^2") {
    constexpr int n = 10000;
    double s2 = 0.0, s4 = 0.0;
    for (int k = 0; k < n; ++k) {
      const auto out = ddim_step(g, d, a, b, an, bn, 0.0, rng);
      const double r = out[0] - an[0] * d[0];
      s2 += r * r;
      s4 += r * r * r * r;
    }
    const double m2 = s2 / n;
    CHECK(std::abs(m2 - bn[0] * bn[0]) < 3.0 * std::sqrt((s4 / n - m2 * m2) / n));
  }
  CHECK_THROWS_AS(ddim_step(g, d, a, b, an, bn, 1.5, rng), DomainError);
}

TEST_CASE("generate") {
  const Schedule s;
  Rng rng(6);
  const auto h0 = gaussian(8, rng);
  TimeMatrix tau0(2, 2);
  for (std::size_t i = 0; i < 4; ++i) tau0[i] = rng.uniform(50.0, 900.0);
  const auto [alpha, beta] = s.maps(tau0, 2);
  const auto start = forward_noise(h0, alpha, beta, rng).noisy;

  SUBCASE("an exact denoiser recovers the clean sample deterministically") {
    GenerateOptions opt;
    opt.eps_hybrid = 1.0;
    opt.keep_trajectory = true;
    for (const auto& rule : SteppingRule::sweep()) {
      opt.stepping = rule;
      const auto out = generate(KnownCleanDenoiser(h0), s, start, tau0, opt, rng);
      CHECK(out.steps_taken == opt.steps);
      CHECK(out.trajectory.size() == static_cast<std::size_t>(opt.steps) + 1);
      CHECK(out.trajectory.back().mean_tau == 0.0);
      for (std::size_t i = 0; i < h0.size(); ++i) CHECK(out.sample[i] == doctest::Approx(h0[i]).epsilon(1e-9));
    }
  }
  SUBCASE("zero start time returns the input untouched") {
    const auto out = generate(KnownCleanDenoiser(h0), s, start, TimeMatrix(2, 2, 0.0), {}, rng);
    CHECK(out.sample == start);
    CHECK(out.steps_taken == 0);
  }
  SUBCASE("normalization reaches only the denoiser") {
    RecordingDenoiser rec;
    GenerateOptions opt;
    opt.steps = 3;
    opt.eps_hybrid = 1.0;
    generate(rec, s, start, tau0, opt, rng);
    REQUIRE(rec.states.size() == 3);
    CHECK(rec.states[0] == start);
    CHECK(rec.inputs[0] == normalize_input(start, beta, NormalizationMode::IdenticalNoisePower));
    CHECK(rec.inputs[0] != start);
  }
  SUBCASE("same seed, same trajectory") {
    GenerateOptions opt;
    opt.keep_trajectory = true;
    Rng r1(42), r2(42);
    const auto a1 = generate(KnownCleanDenoiser(h0), s, start, tau0, opt, r1);
    const auto a2 = generate(KnownCleanDenoiser(h0), s, start, tau0, opt, r2);
    REQUIRE(a1.trajectory.size() == a2.trajectory.size());
    for (std::size_t k = 0; k < a1.trajectory.size(); ++k) CHECK(a1.trajectory[k].state == a2.trajectory[k].state);
  }
}
