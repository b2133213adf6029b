#include "nid/channel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace nid {

namespace {

constexpr double kPi = std::numbers::pi;

double degrees(double d) { return d * kPi / 180.0; }

}  // namespace

void ChannelParams::validate() const {
  if (min_paths < 1 || max_paths < min_paths) throw DomainError("channel: need 1 <= min_paths <= max_paths");
  if (!(subcarrier_spacing > 0.0) || !(delay_spread >= 0.0)) throw DomainError("channel: bad spacing or spread");
  if (!(angle_center_range >= 0.0 && angle_spread >= 0.0 && angle_center_range + angle_spread <= 90.0))
    throw DomainError("channel: angles must stay within +-90 degrees");
}

std::vector<double> channel_from_paths(std::span<const PropagationPath> paths, std::size_t n_a, std::size_t n_c,
                                       double subcarrier_spacing) {
  if (paths.empty()) throw DomainError("channel: need at least one path");
  const std::size_t n = n_a * n_c;
  std::vector<double> h(2 * n, 0.0);
  for (const auto& p : paths) {
    const double spatial = kPi * std::sin(p.angle);
    const double spectral = 2.0 * kPi * subcarrier_spacing * p.delay;
    for (std::size_t a = 0; a < n_a; ++a)
      for (std::size_t c = 0; c < n_c; ++c) {
        const double phase = -spectral * static_cast<double>(c) - spatial * static_cast<double>(a);
        const std::complex<double> v = p.gain * std::polar(1.0, phase);
        h[a * n_c + c] += v.real();
        h[n + a * n_c + c] += v.imag();
      }
  }
  return h;
}

std::vector<double> synth_channel(const ChannelParams& params, std::size_t n_a, std::size_t n_c, Rng& rng) {
  params.validate();
  const auto count = static_cast<std::size_t>(rng.integer(params.min_paths, params.max_paths));
  const double centre = rng.uniform(-params.angle_center_range, params.angle_center_range);
  std::vector<PropagationPath> paths(count);
  for (auto& p : paths) {
    p.gain = {rng.normal() * std::numbers::sqrt2 / 2.0, rng.normal() * std::numbers::sqrt2 / 2.0};
    p.delay = rng.uniform(0.0, params.delay_spread);
    p.angle = degrees(centre + rng.uniform(-params.angle_spread, params.angle_spread));
  }
  auto h = channel_from_paths(paths, n_a, n_c, params.subcarrier_spacing);
  normalize_channel(h);
  return h;
}

void normalize_channel(std::span<double> h) {
  double sq = 0.0;
  for (double x : h) sq += x * x;
  if (!(sq > 0.0) || !std::isfinite(sq)) throw DomainError("normalize_channel: zero or non-finite norm");
  const double target = std::sqrt(static_cast<double>(h.size()));
  const double scale = target / std::sqrt(sq);
  for (double& x : h) x *= scale;
}

double nmse(std::span<const double> h_hat, std::span<const double> h) {
  require_same_size(h_hat, h, "nmse");
  double err = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double d = h_hat[i] - h[i];
    err += d * d;
    ref += h[i] * h[i];
  }
  if (!(ref > 0.0)) throw DomainError("nmse: zero-norm reference");
  return err / ref;
}

// --- initialization patterns ------------------------------------------------

double default_snr_db(InitPatternKind kind) {
  switch (kind) {
    case InitPatternKind::White: return -10.0;
    case InitPatternKind::Exp: return -5.0;
    case InitPatternKind::Salt:
    case InitPatternKind::SaltRec: return 0.0;
    case InitPatternKind::Pilot:
    case InitPatternKind::PilotCar: return 10.0;
  }
  return 0.0;
}

std::string to_string(InitPatternKind kind) {
  switch (kind) {
    case InitPatternKind::White: return "white";
    case InitPatternKind::Exp: return "exp";
    case InitPatternKind::Salt: return "salt";
    case InitPatternKind::SaltRec: return "salt-rec";
    case InitPatternKind::Pilot: return "pilot";
    case InitPatternKind::PilotCar: return "pilot-car";
  }
  return "?";
}

std::vector<InitPatternKind> InitPatternSpec::all_kinds() {
  return {InitPatternKind::White, InitPatternKind::Exp,   InitPatternKind::Salt,
          InitPatternKind::SaltRec, InitPatternKind::Pilot, InitPatternKind::PilotCar};
}

InitPatternSpec InitPatternSpec::make(InitPatternKind kind) {
  InitPatternSpec spec;
  spec.kind = kind;
  spec.snr_db = default_snr_db(kind);
  return spec;
}

InitPatternSpec InitPatternSpec::parse(const std::string& name) {
  for (auto kind : all_kinds())
    if (to_string(kind) == name) return make(kind);
  throw DomainError("unknown initialization pattern '" + name + "'");
}

std::string InitPatternSpec::name() const { return to_string(kind); }

void InitPatternSpec::validate(std::size_t n_a, std::size_t n_c) const {
  if (!std::isfinite(snr_db)) throw DomainError("init pattern: snr_db must be finite");
  auto fraction = [](double f) { return f > 0.0 && f <= 1.0; };
  if (!fraction(mask_fraction) || !fraction(background_fraction))
    throw DomainError("init pattern: fractions must lie in (0, 1]");
  if (!(exp_rate > 0.0)) throw DomainError("init pattern: exp rate must be positive");
  if (n_a == 0 || n_c == 0) throw DomainError("init pattern: empty grid");
  if (salt_rec_antenna_period == 0 || salt_rec_subcarrier_period == 0 || pilot_spacing == 0 || pilot_car_period == 0)
    throw DomainError("init pattern: periods must be positive");
}

namespace {

// k distinct indices out of n, uniform without replacement (partial Fisher-Yates).
std::vector<std::size_t> choose(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = static_cast<std::size_t>(rng.integer(static_cast<std::int64_t>(i), static_cast<std::int64_t>(n - 1)));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

std::size_t retained(double fraction, std::size_t n) {
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))), 1, n);
}

}  // namespace

Reliability make_reliability(const InitPatternSpec& spec, std::size_t n_a, std::size_t n_c, Rng& rng) {
  spec.validate(n_a, n_c);
  const std::size_t n = n_a * n_c;
  // Pattern weights of the structured share; zero weight marks a masked element.
  std::vector<double> weight(n, 0.0);
  switch (spec.kind) {
    case InitPatternKind::White:
      std::fill(weight.begin(), weight.end(), 1.0);
      break;
    case InitPatternKind::Exp:
      for (double& w : weight) w = rng.exponential(spec.exp_rate);
      break;
    case InitPatternKind::Salt:
      for (std::size_t i : choose(n, retained(spec.mask_fraction, n), rng)) weight[i] = 1.0;
      break;
    case InitPatternKind::SaltRec: {
      // Tiles larger than the grid shrink to it.
      const std::size_t pa = std::min(spec.salt_rec_antenna_period, n_a);
      const std::size_t pc = std::min(spec.salt_rec_subcarrier_period, n_c);
      std::vector<double> tile(pa * pc, 0.0);
      for (std::size_t i : choose(pa * pc, retained(spec.mask_fraction, pa * pc), rng))
        tile[i] = rng.exponential(spec.exp_rate);
      for (std::size_t a = 0; a < n_a; ++a)
        for (std::size_t c = 0; c < n_c; ++c) weight[a * n_c + c] = tile[(a % pa) * pc + c % pc];
      break;
    }
    case InitPatternKind::Pilot:
      for (std::size_t a = 0; a < n_a; a += spec.pilot_spacing)
        for (std::size_t c = 0; c < n_c; c += spec.pilot_spacing) weight[a * n_c + c] = 1.0;
      break;
    case InitPatternKind::PilotCar:
      for (std::size_t a = 0; a < n_a; ++a)
        for (std::size_t c = 0; c < n_c; c += spec.pilot_car_period) weight[a * n_c + c] = 1.0;
      break;
  }

  const double total_noise = 2.0 * static_cast<double>(n) / std::pow(10.0, spec.snr_db / 10.0);
  const double background = spec.background_fraction * total_noise / static_cast<double>(n);
  const double structured = (1.0 - spec.background_fraction) * total_noise;
  const double weight_sum = total(weight);

  Reliability out{RealGrid(n_a, n_c), ReliabilityMap(n_a, n_c), std::vector<bool>(n, false)};
  for (std::size_t i = 0; i < n; ++i) {
    out.observed[i] = weight[i] > 0.0;
    out.noise_power[i] = background + structured * weight[i] / weight_sum;
    out.reliability[i] = out.observed[i] ? 1.0 / std::sqrt(out.noise_power[i]) : 0.0;
  }
  return out;
}

std::vector<double> observe(std::span<const double> h, const ReliabilityMap& m, Rng& rng) {
  const std::size_t n = m.size();
  if (h.size() != 2 * n) throw ShapeError("observe: channel and reliability map disagree");
  const double component = std::numbers::sqrt2 / 2.0;
  std::vector<double> out(h.size());
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = m[i] * h[i] + component * rng.normal();
    out[n + i] = m[i] * h[n + i] + component * rng.normal();
  }
  return out;
}

DiffusionInit init_diffusion_state(std::span<const double> h_bar, const ReliabilityMap& m, const Schedule& schedule) {
  const std::size_t n = m.size();
  if (h_bar.size() != 2 * n) throw ShapeError("init_diffusion_state: observation and reliability map disagree");
  DiffusionInit out{std::vector<double>(h_bar.size()), TimeMatrix(m.rows(), m.cols())};
  for (std::size_t i = 0; i < n; ++i) {
    if (!(m[i] >= 0.0) || !std::isfinite(m[i])) throw DomainError("init_diffusion_state: reliability must be finite and >= 0");
    const double scale = 1.0 / (m[i] + 1.0);
    out.h_init[i] = h_bar[i] * scale;
    out.h_init[n + i] = h_bar[n + i] * scale;
    out.tau0[i] = m[i] == 0.0 ? schedule.max_time() : schedule.gamma_inverse(m[i] * scale);
  }
  return out;
}

TimeMatrix identical_time(const TimeMatrix& tau0, const Schedule& schedule) {
  if (tau0.empty()) throw ShapeError("identical_time: empty time matrix");
  double alpha = 0.0;
  for (double t : tau0.values()) alpha += schedule.gamma(t);
  alpha /= static_cast<double>(tau0.size());
  return TimeMatrix(tau0.rows(), tau0.cols(), std::round(schedule.gamma_inverse(alpha)));
}

}  // namespace nid
