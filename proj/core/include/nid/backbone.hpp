#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "nid/diffusion.hpp"
#include "nid/schedule.hpp"
#include "nid/types.hpp"

namespace nid {

enum class EmbeddingScheme { RowWise, ColumnWise, Together };
enum class TimeAveraging { TauAvg, AlphaAvg };
enum class Activation { Gelu, Identity };

EmbeddingScheme parse_embedding_scheme(const std::string& name);
TimeAveraging parse_averaging(const std::string& name);
Activation parse_activation(const std::string& name);
std::string to_string(EmbeddingScheme s);
std::string to_string(TimeAveraging a);
std::string to_string(Activation a);

struct MixerConfig {
  std::size_t n_a = 8;
  std::size_t n_c = 16;
  std::size_t n_blocks = 4;
  std::size_t hidden_mult = 2;
  std::size_t embed_dim = 64;
  EmbeddingScheme scheme = EmbeddingScheme::ColumnWise;
  TimeAveraging averaging = TimeAveraging::AlphaAvg;
  Activation activation = Activation::Gelu;
  int max_time = 1000;

  void validate() const;
  friend bool operator==(const MixerConfig&, const MixerConfig&) = default;
};

/// Per-axis rounded mean times fed to the embeddings.
struct TimeEmbeddingVectors {
  std::vector<int> tau_c;  // length n_a: mean over subcarriers, one per antenna
  std::vector<int> tau_a;  // length n_c: mean over antennas, one per subcarrier
};

/// Row/column means of tau (TauAvg) or of gamma(tau) mapped back through
/// gamma^-1 (AlphaAvg), rounded half away from zero.
TimeEmbeddingVectors reduce_time(const TimeMatrix& tau, TimeAveraging averaging, const Schedule& schedule);

/// Sinusoidal features of width `width`: sin over the first half, cos over the
/// second, periods on a geometric ladder from 1 to 4T.
std::vector<double> sinusoidal_features(int t, std::size_t width, int max_time);

/// Injection sites: input/output of the antenna-mixing sublayer (0, 1) and of
/// the subcarrier-mixing sublayer (2, 3).
enum class Site : int { AntennaIn = 0, AntennaOut = 1, SubcarrierIn = 2, SubcarrierOut = 3 };

/// Which reduced time vector a projection table consumes.
enum class TimeAxis { PerSubcarrier /* tau_a */, PerAntenna /* tau_c */ };

/// True when `scheme` routes the `axis` vector into `site`.
bool site_active(EmbeddingScheme scheme, Site site, TimeAxis axis);

/// Offsets of each parameter tensor inside the flat parameter vector.
///
/// Canonical order, per block b = 0..n_blocks-1:
///   antenna sublayer:    ln_gain[2Na], ln_bias[2Na], w1[H_a x 2Na], b1[H_a], w2[2Na x H_a], b2[2Na]
///   subcarrier sublayer: ln_gain[2Nc], ln_bias[2Nc], w1[H_c x 2Nc], b1[H_c], w2[2Nc x H_c], b2[2Nc]
///   sites 0..3, each:    per_subcarrier w[2Na x E], b[2Na], per_antenna w[2Nc x E], b[2Nc]
/// then head w[2 x 2], head b[2]. Matrices are row-major (out x in), H_x = hidden_mult * width.
struct ParameterLayout {
  struct Sublayer {
    std::size_t width = 0, hidden = 0;
    std::size_t ln_gain = 0, ln_bias = 0, w1 = 0, b1 = 0, w2 = 0, b2 = 0;
  };
  struct SiteTables {
    std::size_t sub_w = 0, sub_b = 0;  // consumes tau_a, yields 2Na values per subcarrier
    std::size_t ant_w = 0, ant_b = 0;  // consumes tau_c, yields 2Nc values per antenna
  };
  struct Block {
    Sublayer antenna, subcarrier;
    SiteTables sites[4];
  };
  std::vector<Block> blocks;
  std::size_t head_w = 0, head_b = 0;
  std::size_t total = 0;

  static ParameterLayout build(const MixerConfig& config);
};

/// Activations retained by a batched forward pass for backward.
class ForwardCache {
 public:
  ForwardCache();
  ~ForwardCache();
  ForwardCache(ForwardCache&&) noexcept;
  ForwardCache& operator=(ForwardCache&&) noexcept;

 private:
  friend class MixerModel;
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Interleaved MLP-Mixer over the N_a x N_c x 2 channel grid with per-axis
/// time embeddings. Parameters are read-only during forward and may be shared.
class MixerModel {
 public:
  MixerModel(MixerConfig config, std::uint64_t seed);
  MixerModel(MixerConfig config, std::vector<double> parameters);
  ~MixerModel();
  MixerModel(const MixerModel&);
  MixerModel& operator=(const MixerModel&);
  MixerModel(MixerModel&&) noexcept;
  MixerModel& operator=(MixerModel&&) noexcept;

  const MixerConfig& config() const { return config_; }
  const ParameterLayout& layout() const { return layout_; }
  const Schedule& schedule() const { return schedule_; }
  static std::size_t parameter_count(const MixerConfig& config) { return ParameterLayout::build(config).total; }
  std::size_t parameter_count() const { return params_.size(); }
  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }

  /// Single-sample prediction; x is plane-major (Re plane, Im plane).
  std::vector<double> forward(std::span<const double> x, const TimeMatrix& tau) const;

  /// Batched forward keeping what backward needs. Outputs are plane-major per sample.
  std::vector<std::vector<double>> forward(const std::vector<std::vector<double>>& xs,
                                           const std::vector<TimeMatrix>& taus, ForwardCache* cache) const;

  /// Adds d(loss)/d(parameters) to `grad` given d(loss)/d(output) per sample.
  void backward(const ForwardCache& cache, const std::vector<std::vector<double>>& upstream,
                std::span<double> grad) const;

  /// Projected embedding of time t at one site/axis table (length 2Na or 2Nc),
  /// i.e. the site's affine map applied to sinusoidal_features(t).
  std::vector<double> embed_time(int t, std::size_t block, Site site, TimeAxis axis) const;

 private:
  MixerConfig config_;
  ParameterLayout layout_;
  Schedule schedule_;
  std::vector<double> params_;
  std::vector<double> features_;  // (T + 1) x E sinusoid table
};

/// Model-backed denoiser: v = f(normalized g, tau), D = alpha * g - beta * v.
class MixerDenoiser final : public Denoiser {
 public:
  explicit MixerDenoiser(const MixerModel& model) : model_(&model) {}
  std::vector<double> denoise(const DenoiserQuery& query) const override;

 private:
  const MixerModel* model_;
};

struct Checkpoint {
  MixerModel model;
  NormalizationMode norm = NormalizationMode::IdenticalNoisePower;
};

/// "NIDM" file: magic, u32 version, u32 config fields, u32 norm mode,
/// u64 parameter count, then parameters as little-endian binary64.
void save_checkpoint(const std::filesystem::path& path, const MixerModel& model, NormalizationMode norm);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace nid
