#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>

#include "nid/channel.hpp"
#include "nid/dataset.hpp"

using namespace nid;

namespace {

double sum_sq(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

Eigen::MatrixXcd as_matrix(const std::vector<double>& h, std::size_t n_a, std::size_t n_c) {
  const std::size_t n = n_a * n_c;
  Eigen::MatrixXcd m(n_a, n_c);
  for (std::size_t a = 0; a < n_a; ++a)
    for (std::size_t c = 0; c < n_c; ++c) m(a, c) = {h[a * n_c + c], h[n + a * n_c + c]};
  return m;
}

double adjacent_correlation(const std::vector<double>& h, std::size_t n_a, std::size_t n_c) {
  const auto m = as_matrix(h, n_a, n_c);
  std::complex<double> cross = 0.0;
  double power = 0.0;
  for (std::size_t a = 0; a < n_a; ++a)
    for (std::size_t c = 0; c + 1 < n_c; ++c) {
      cross += m(a, c + 1) * std::conj(m(a, c));
      power += std::norm(m(a, c));
    }
  return std::abs(cross) / power;
}

}  // namespace

TEST_CASE("channel synthesis") {
  SUBCASE("single zero-phase path is constant") {
    const std::vector<PropagationPath> p{{{1.0, 0.0}, 0.0, 0.0}};
    const auto h = channel_from_paths(p, 4, 8, 300e3);
    for (std::size_t i = 0; i < 32; ++i) {
      CHECK(h[i] == doctest::Approx(1.0));
      CHECK(h[32 + i] == doctest::Approx(0.0));
    }
  }
  SUBCASE("single path is rank one") {
    const std::vector<PropagationPath> p{{{0.3, -0.8}, 0.37e-6, 0.4}};
    const auto h = channel_from_paths(p, 8, 16, 300e3);
    const Eigen::JacobiSVD<Eigen::MatrixXcd> svd(as_matrix(h, 8, 16));
    const auto sv = svd.singularValues();
    CHECK(sv(1) < 1e-9 * sv(0));
  }
  SUBCASE("normalized to sqrt(d)") {
    Rng rng(1);
    const auto h = synth_channel(ChannelParams{}, 8, 16, rng);
    CHECK(sum_sq(h) == doctest::Approx(256.0).epsilon(1e-12));
    auto twice = h;
    normalize_channel(twice);
    for (std::size_t i = 0; i < h.size(); ++i) CHECK(twice[i] == doctest::Approx(h[i]).epsilon(1e-14));
  }
  SUBCASE("frequency correlation falls with delay spread") {
    ChannelParams narrow, wide;
    narrow.delay_spread = 0.1e-6;
    wide.delay_spread = 2e-6;
    Rng r1(2), r2(2);
    double cn = 0.0, cw = 0.0;
    for (int i = 0; i < 100; ++i) {
      cn += adjacent_correlation(synth_channel(narrow, 8, 16, r1), 8, 16);
      cw += adjacent_correlation(synth_channel(wide, 8, 16, r2), 8, 16);
    }
    CHECK(cn > cw);
  }
  CHECK_THROWS_AS(channel_from_paths({}, 2, 2, 1.0), DomainError);
  ChannelParams bad;
  bad.max_paths = 1;
  CHECK_THROWS_AS(bad.validate(), DomainError);
}

TEST_CASE("nmse") {
  const std::vector<double> h{1.0, -2.0, 0.5, 3.0};
  CHECK(nmse(h, h) == 0.0);
  CHECK(nmse(std::vector<double>(4, 0.0), h) == 1.0);
  std::vector<double> e{0.5, 0.0, 0.0, 0.0};
  const double scale = std::sqrt(0.25 * sum_sq(h)) / 0.5;
  std::vector<double> noisy = h;
  for (std::size_t i = 0; i < 4; ++i) noisy[i] += e[i] * scale;
  CHECK(nmse(noisy, h) == doctest::Approx(0.25).epsilon(1e-14));
  CHECK_THROWS_AS(nmse(h, std::vector<double>(4, 0.0)), DomainError);
}

TEST_CASE("reliability maps") {
  Rng rng(3);
  SUBCASE("white at -10 dB") {
    const auto r = make_reliability(InitPatternSpec::make(InitPatternKind::White), 32, 64, rng);
    Rng crng(4);
    const auto h = synth_channel(ChannelParams{}, 32, 64, crng);
    const std::size_t n = 32 * 64;
    double ratio = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(r.noise_power[i] == r.noise_power[0]);
      ratio += (h[i] * h[i] + h[n + i] * h[n + i]) / r.noise_power[i];
    }
    CHECK(ratio / n == doctest::Approx(0.1).epsilon(1e-9));
  }
  SUBCASE("salt keeps 30 percent") {
    const auto r = make_reliability(InitPatternSpec::make(InitPatternKind::Salt), 32, 64, rng);
    const auto kept = std::count(r.observed.begin(), r.observed.end(), true);
    CHECK(kept == std::llround(0.3 * 32 * 64));
    double background = 0.0;
    for (std::size_t i = 0; i < r.observed.size(); ++i)
      if (!r.observed[i]) {
        if (background == 0.0) background = r.noise_power[i];
        CHECK(r.noise_power[i] == background);
        CHECK(r.reliability[i] == 0.0);
      }
  }
  SUBCASE("pilot grid") {
    const auto r = make_reliability(InitPatternSpec::make(InitPatternKind::Pilot), 8, 16, rng);
    for (std::size_t a = 0; a < 8; ++a)
      for (std::size_t c = 0; c < 16; ++c) CHECK(r.observed[a * 16 + c] == (a % 2 == 0 && c % 2 == 0));
  }
  SUBCASE("pilot-car columns and salt-rec periodicity") {
    const auto pc = make_reliability(InitPatternSpec::make(InitPatternKind::PilotCar), 8, 32, rng);
    for (std::size_t a = 0; a < 8; ++a)
      for (std::size_t c = 0; c < 32; ++c) CHECK(pc.observed[a * 32 + c] == (c % 8 == 0));
    const auto sr = make_reliability(InitPatternSpec::make(InitPatternKind::SaltRec), 16, 32, rng);
    for (std::size_t a = 0; a < 16; ++a)
      for (std::size_t c = 0; c < 32; ++c)
        CHECK(sr.noise_power[a * 32 + c] == sr.noise_power[(a % 8) * 32 + c % 8]);
  }
  SUBCASE("energy budget and determinism") {
    for (auto kind : InitPatternSpec::all_kinds()) {
      CAPTURE(to_string(kind));
      auto spec = InitPatternSpec::make(kind);
      Rng a(5), b(5);
      const auto r = make_reliability(spec, 16, 32, a);
      const auto again = make_reliability(spec, 16, 32, b);
      CHECK(std::ranges::equal(r.noise_power.values(), again.noise_power.values()));
      const double expected = 2.0 * 16 * 32 / std::pow(10.0, spec.snr_db / 10.0);
      CHECK(total(r.noise_power.values()) == doctest::Approx(expected).epsilon(1e-9));
    }
  }
  CHECK(InitPatternSpec::parse("salt-rec").kind == InitPatternKind::SaltRec);
  CHECK_THROWS_AS(InitPatternSpec::parse("pepper"), DomainError);
  const auto small = make_reliability(InitPatternSpec::make(InitPatternKind::SaltRec), 4, 6, rng);
  CHECK(std::count(small.observed.begin(), small.observed.end(), true) == std::llround(0.3 * 24));
  auto bad = InitPatternSpec::make(InitPatternKind::Pilot);
  bad.pilot_spacing = 0;
  CHECK_THROWS_AS(make_reliability(bad, 4, 4, rng), DomainError);
}

TEST_CASE("observation model") {
  Rng rng(6);
  const std::size_t n = 4;
  const std::vector<double> h{1.0, -1.0, 0.5, 2.0, 0.0, 0.3, -0.7, 1.1};
  SUBCASE("masked elements are unit complex noise") {
    const ReliabilityMap m(2, 2, 0.0);
    std::vector<double> power(n, 0.0);
    constexpr int draws = 10000;
    for (int k = 0; k < draws; ++k) {
      const auto o = observe(h, m, rng);
      for (std::size_t i = 0; i < n; ++i) power[i] += o[i] * o[i] + o[n + i] * o[n + i];
    }
    // |CN(0,1)|^2 is Exp(1): standard error 1/sqrt(draws).
    for (double p : power) CHECK(std::abs(p / draws - 1.0) < 3.0 / std::sqrt(double(draws)));
  }
  SUBCASE("huge reliability") {
    const ReliabilityMap m(2, 2, 1e6);
    const auto o = observe(h, m, rng);
    for (std::size_t i = 0; i < 2 * n; ++i)
      if (h[i] != 0.0) CHECK(o[i] / 1e6 == doctest::Approx(h[i]).epsilon(1e-5));
  }
}

TEST_CASE("diffusion initialization") {
  const Schedule s;
  const std::vector<double> hb{2.0, 4.0, -6e9, 1.0, 8.0, 0.0};
  const ReliabilityMap m(1, 3, std::vector<double>{0.0, 1.0, 1e9});
  const auto init = init_diffusion_state(hb, m, s);
  CHECK(init.h_init[0] == 2.0);
  CHECK(init.h_init[3] == 1.0);
  CHECK(init.tau0[0] == 1000.0);
  CHECK(init.h_init[1] == 2.0);
  CHECK(init.h_init[4] == 4.0);
  CHECK(init.tau0[1] == doctest::Approx(116.77830892523119759).epsilon(1e-9));
  CHECK(init.tau0[2] < 1e-4);
  CHECK(init.h_init[2] == doctest::Approx(-6.0).epsilon(1e-8));

  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    const double mi = rng.uniform(0.01, 50.0);
    const auto one = init_diffusion_state(std::vector<double>{0.0, 0.0}, ReliabilityMap(1, 1, mi), s);
    CHECK(s.gamma(one.tau0[0]) == doctest::Approx(mi / (mi + 1.0)).epsilon(1e-9));
  }
  CHECK_THROWS_AS(init_diffusion_state(hb, ReliabilityMap(1, 3, -1.0), s), DomainError);
  CHECK_THROWS_AS(init_diffusion_state(std::vector<double>(4), m, s), ShapeError);

  const TimeMatrix tau0(1, 2, std::vector<double>{0.0, 1000.0});
  const auto same = identical_time(tau0, s);
  CHECK(same[0] == 117.0);
  CHECK(same[1] == 117.0);
}

TEST_CASE("dataset files") {
  const auto data = synth_dataset(ChannelParams{}, 4, 8, 6, 42);
  const auto tail = synth_dataset(ChannelParams{}, 4, 8, 2, 42, 4);
  CHECK(tail.samples[0] == data.samples[4]);
  CHECK(tail.samples[1] == data.samples[5]);

  const auto path = std::filesystem::temp_directory_path() / "nid_channel_test.nidf";
  write_dataset(path, data);
  CHECK(std::filesystem::file_size(path) == 4 + 4 * 4 + 6 * 64 * 4);
  const auto back = read_dataset(path);
  CHECK(back.data.size() == 6);
  CHECK(back.data.n_a == 4);
  CHECK(back.renormalized == 0);
  for (std::size_t k = 0; k < 6; ++k) {
    CHECK(sum_sq(back.data.samples[k]) == doctest::Approx(64.0).epsilon(1e-12));
    for (std::size_t i = 0; i < 64; ++i) CHECK(back.data.samples[k][i] == doctest::Approx(data.samples[k][i]).epsilon(1e-6));
  }

  auto scaled = data;
  for (double& x : scaled.samples[2]) x *= 3.0;
  write_dataset(path, scaled);
  CHECK(read_dataset(path).renormalized == 1);

  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 4);
  CHECK_THROWS(read_dataset(path));
  {
    std::ofstream junk(path, std::ios::binary | std::ios::trunc);
    junk << "NOPE and some bytes";
  }
  CHECK_THROWS(read_dataset(path));
  std::filesystem::remove(path);
}
