#pragma once

#include <complex>
#include <span>
#include <string>
#include <vector>

#include "nid/rng.hpp"
#include "nid/schedule.hpp"
#include "nid/types.hpp"

namespace nid {

// Channels are stored as stacked real vectors of length 2 * n_a * n_c:
// the real plane (row-major a * n_c + c) followed by the imaginary plane.

struct ChannelParams {
  int min_paths = 3;
  int max_paths = 8;
  double subcarrier_spacing = 300e3;  // Hz
  double delay_spread = 1e-6;         // s, delays uniform in [0, spread]
  // Angles are clustered: a centre uniform in +-angle_center_range, then
  // per-path offsets uniform in +-angle_spread (degrees).
  double angle_center_range = 60.0;
  double angle_spread = 10.0;

  void validate() const;
};

struct PropagationPath {
  std::complex<double> gain;
  double delay = 0.0;  // s
  double angle = 0.0;  // rad
};

/// H[a, c] = sum_p g_p exp(-j 2 pi c df tau_p) exp(-j pi a sin(theta_p)), unscaled.
std::vector<double> channel_from_paths(std::span<const PropagationPath> paths, std::size_t n_a, std::size_t n_c,
                                       double subcarrier_spacing);

/// Random multipath channel scaled to norm sqrt(2 * n_a * n_c).
std::vector<double> synth_channel(const ChannelParams& params, std::size_t n_a, std::size_t n_c, Rng& rng);

/// Scales h to norm sqrt(h.size()). Idempotent.
void normalize_channel(std::span<double> h);

/// ||h_hat - h||^2 / ||h||^2
double nmse(std::span<const double> h_hat, std::span<const double> h);

// --- initialization patterns ------------------------------------------------

enum class InitPatternKind { White, Exp, Salt, SaltRec, Pilot, PilotCar };

struct InitPatternSpec {
  InitPatternKind kind = InitPatternKind::White;
  double snr_db = -10.0;
  double mask_fraction = 0.3;
  double exp_rate = 0.5;
  std::size_t salt_rec_antenna_period = 8;
  std::size_t salt_rec_subcarrier_period = 8;
  std::size_t pilot_spacing = 2;
  std::size_t pilot_car_period = 8;
  double background_fraction = 0.1;

  /// Spec for `kind` at its default SNR.
  static InitPatternSpec make(InitPatternKind kind);
  /// "white", "exp", "salt", "salt-rec", "pilot", "pilot-car".
  static InitPatternSpec parse(const std::string& name);
  static std::vector<InitPatternKind> all_kinds();
  std::string name() const;
  void validate(std::size_t n_a, std::size_t n_c) const;
};

std::string to_string(InitPatternKind kind);
double default_snr_db(InitPatternKind kind);

struct Reliability {
  RealGrid noise_power;       // complex noise variance per element (background included)
  ReliabilityMap reliability;  // 1 / sqrt(noise_power) where observed, 0 where masked
  std::vector<bool> observed;  // elements carrying a structured observation
};

/// Noise-power map whose total energy is 2 * n_a * n_c / 10^(snr/10), split into
/// an even background share and a pattern-shaped share over observed elements.
Reliability make_reliability(const InitPatternSpec& spec, std::size_t n_a, std::size_t n_c, Rng& rng);

/// H_bar = M * H + CN(0, 1) noise, elementwise.
std::vector<double> observe(std::span<const double> h, const ReliabilityMap& m, Rng& rng);

struct DiffusionInit {
  std::vector<double> h_init;
  TimeMatrix tau0;
};

/// h_init = H_bar / (M + 1), tau0 = gamma^-1(M / (M + 1)).
DiffusionInit init_diffusion_state(std::span<const double> h_bar, const ReliabilityMap& m, const Schedule& schedule);

/// Scalar-time counterpart of tau0: every entry round(gamma^-1(mean gamma(tau0))).
TimeMatrix identical_time(const TimeMatrix& tau0, const Schedule& schedule);

}  // namespace nid
