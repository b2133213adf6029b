#include "nid/backbone.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

namespace nid {

namespace {

using Mat = Eigen::MatrixXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowMap = Eigen::Map<const RowMat>;
using RowMap = Eigen::Map<RowMat>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;

constexpr double kLayerNormEps = 1e-5;
constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluCubic = 0.044715;

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluScale * (x + kGeluCubic * x * x * x))); }

double gelu_grad(double x) {
  const double t = std::tanh(kGeluScale * (x + kGeluCubic * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluScale * (1.0 + 3.0 * kGeluCubic * x * x);
}

// Antenna layout: rows p*Na + a, columns b*Nc + c (one token per subcarrier).
// Subcarrier layout: rows p*Nc + c, columns b*Na + a (one token per antenna).
Mat antenna_to_subcarrier(const Mat& m, std::size_t na, std::size_t nc) {
  const std::size_t batch = static_cast<std::size_t>(m.cols()) / nc;
  Mat out(static_cast<Eigen::Index>(2 * nc), static_cast<Eigen::Index>(batch * na));
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t p = 0; p < 2; ++p)
      for (std::size_t a = 0; a < na; ++a)
        for (std::size_t c = 0; c < nc; ++c)
          out(static_cast<Eigen::Index>(p * nc + c), static_cast<Eigen::Index>(b * na + a)) =
              m(static_cast<Eigen::Index>(p * na + a), static_cast<Eigen::Index>(b * nc + c));
  return out;
}

Mat subcarrier_to_antenna(const Mat& m, std::size_t na, std::size_t nc) {
  const std::size_t batch = static_cast<std::size_t>(m.cols()) / na;
  Mat out(static_cast<Eigen::Index>(2 * na), static_cast<Eigen::Index>(batch * nc));
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t p = 0; p < 2; ++p)
      for (std::size_t a = 0; a < na; ++a)
        for (std::size_t c = 0; c < nc; ++c)
          out(static_cast<Eigen::Index>(p * na + a), static_cast<Eigen::Index>(b * nc + c)) =
              m(static_cast<Eigen::Index>(p * nc + c), static_cast<Eigen::Index>(b * na + a));
  return out;
}

enum class Layout { Antenna, Subcarrier };

struct SublayerCache {
  Mat normalized;  // N
  Eigen::VectorXd inv_std;  // one per sample
  Mat affine;  // Y = g * N + bias
  Mat pre;     // A = W1 Y + b1
  Mat act;     // S
};

struct BlockCache {
  SublayerCache antenna, subcarrier;
};

}  // namespace

struct ForwardCache::Impl {
  std::size_t batch = 0;
  Mat emb_sub;  // E x (B * Nc), features of tau_a
  Mat emb_ant;  // E x (B * Na), features of tau_c
  std::vector<BlockCache> blocks;
  Mat stream_out;  // antenna layout, input to the head
};

ForwardCache::ForwardCache() : impl_(std::make_unique<Impl>()) {}
ForwardCache::~ForwardCache() = default;
ForwardCache::ForwardCache(ForwardCache&&) noexcept = default;
ForwardCache& ForwardCache::operator=(ForwardCache&&) noexcept = default;

// --- config / enums ----------------------------------------------------------

EmbeddingScheme parse_embedding_scheme(const std::string& name) {
  if (name == "row") return EmbeddingScheme::RowWise;
  if (name == "column" || name == "col") return EmbeddingScheme::ColumnWise;
  if (name == "together" || name == "both") return EmbeddingScheme::Together;
  throw DomainError("unknown embedding scheme '" + name + "'");
}

TimeAveraging parse_averaging(const std::string& name) {
  if (name == "tau") return TimeAveraging::TauAvg;
  if (name == "alpha") return TimeAveraging::AlphaAvg;
  throw DomainError("unknown time averaging '" + name + "'");
}

Activation parse_activation(const std::string& name) {
  if (name == "gelu") return Activation::Gelu;
  if (name == "identity") return Activation::Identity;
  throw DomainError("unknown activation '" + name + "'");
}

std::string to_string(EmbeddingScheme s) {
  switch (s) {
    case EmbeddingScheme::RowWise: return "row";
    case EmbeddingScheme::ColumnWise: return "column";
    case EmbeddingScheme::Together: return "together";
  }
  return "?";
}

std::string to_string(TimeAveraging a) { return a == TimeAveraging::TauAvg ? "tau" : "alpha"; }
std::string to_string(Activation a) { return a == Activation::Gelu ? "gelu" : "identity"; }

void MixerConfig::validate() const {
  if (n_a == 0 || n_c == 0 || n_blocks == 0 || hidden_mult == 0 || embed_dim < 2 || max_time < 1)
    throw DomainError("mixer config: all sizes must be positive (embed_dim >= 2)");
  if (embed_dim % 2 != 0) throw DomainError("mixer config: embed_dim must be even");
}

// --- time reduction ------------------------------------------------------------

namespace {

int round_time(double t, int max_time) {
  return static_cast<int>(std::clamp(std::round(t), 0.0, static_cast<double>(max_time)));
}

}  // namespace

TimeEmbeddingVectors reduce_time(const TimeMatrix& tau, TimeAveraging averaging, const Schedule& schedule) {
  const std::size_t rows = tau.rows(), cols = tau.cols();
  TimeEmbeddingVectors out;
  out.tau_c.resize(rows);
  out.tau_a.resize(cols);
  const int T = schedule.max_time();
  if (averaging == TimeAveraging::TauAvg) {
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < cols; ++c) s += tau(r, c);
      out.tau_c[r] = round_time(s / static_cast<double>(cols), T);
    }
    for (std::size_t c = 0; c < cols; ++c) {
      double s = 0.0;
      for (std::size_t r = 0; r < rows; ++r) s += tau(r, c);
      out.tau_a[c] = round_time(s / static_cast<double>(rows), T);
    }
    return out;
  }
  RealGrid alpha(rows, cols);
  for (std::size_t i = 0; i < tau.size(); ++i) alpha[i] = schedule.gamma(tau[i]);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += alpha(r, c);
    out.tau_c[r] = round_time(schedule.gamma_inverse(std::min(1.0, s / static_cast<double>(cols))), T);
  }
  for (std::size_t c = 0; c < cols; ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < rows; ++r) s += alpha(r, c);
    out.tau_a[c] = round_time(schedule.gamma_inverse(std::min(1.0, s / static_cast<double>(rows))), T);
  }
  return out;
}

std::vector<double> sinusoidal_features(int t, std::size_t width, int max_time) {
  if (t < 0 || t > max_time) throw DomainError("time embedding: t outside [0, T]");
  if (width < 2 || width % 2 != 0) throw DomainError("time embedding: width must be even and >= 2");
  const std::size_t half = width / 2;
  std::vector<double> f(width);
  const double longest = std::log(4.0 * max_time);
  for (std::size_t k = 0; k < half; ++k) {
    const double frac = half > 1 ? static_cast<double>(k) / static_cast<double>(half - 1) : 1.0;
    const double period = std::exp(frac * longest);
    const double phase = 2.0 * std::numbers::pi * static_cast<double>(t) / period;
    f[k] = t == 0 ? 0.0 : std::sin(phase);
    f[half + k] = t == 0 ? 1.0 : std::cos(phase);
  }
  return f;
}

bool site_active(EmbeddingScheme scheme, Site site, TimeAxis axis) {
  const bool antenna_site = site == Site::AntennaIn || site == Site::AntennaOut;
  switch (scheme) {
    case EmbeddingScheme::RowWise:
      return antenna_site == (axis == TimeAxis::PerSubcarrier);
    case EmbeddingScheme::ColumnWise:
      return antenna_site == (axis == TimeAxis::PerAntenna);
    case EmbeddingScheme::Together:
      return site == Site::AntennaIn || site == Site::SubcarrierOut;
  }
  return false;
}

// --- layout ------------------------------------------------------------------

ParameterLayout ParameterLayout::build(const MixerConfig& config) {
  config.validate();
  ParameterLayout layout;
  std::size_t offset = 0;
  auto take = [&offset](std::size_t n) {
    const std::size_t at = offset;
    offset += n;
    return at;
  };
  auto sublayer = [&](std::size_t width) {
    Sublayer s;
    s.width = width;
    s.hidden = config.hidden_mult * width;
    s.ln_gain = take(width);
    s.ln_bias = take(width);
    s.w1 = take(s.hidden * width);
    s.b1 = take(s.hidden);
    s.w2 = take(width * s.hidden);
    s.b2 = take(width);
    return s;
  };
  const std::size_t wa = 2 * config.n_a, wc = 2 * config.n_c, e = config.embed_dim;
  layout.blocks.resize(config.n_blocks);
  for (auto& block : layout.blocks) {
    block.antenna = sublayer(wa);
    block.subcarrier = sublayer(wc);
    for (auto& site : block.sites) {
      site.sub_w = take(wa * e);
      site.sub_b = take(wa);
      site.ant_w = take(wc * e);
      site.ant_b = take(wc);
    }
  }
  layout.head_w = take(4);
  layout.head_b = take(2);
  layout.total = offset;
  return layout;
}

// --- model ---------------------------------------------------------------------

namespace {

std::vector<double> feature_table(const MixerConfig& config) {
  std::vector<double> table(static_cast<std::size_t>(config.max_time + 1) * config.embed_dim);
  for (int t = 0; t <= config.max_time; ++t) {
    const auto f = sinusoidal_features(t, config.embed_dim, config.max_time);
    std::copy(f.begin(), f.end(), table.begin() + static_cast<std::ptrdiff_t>(t * config.embed_dim));
  }
  return table;
}

}  // namespace

MixerModel::MixerModel(MixerConfig config, std::uint64_t seed)
    : config_(config), layout_(ParameterLayout::build(config)), schedule_(config.max_time),
      params_(layout_.total, 0.0), features_(feature_table(config)) {
  Rng rng(seed);
  auto fill = [&](std::size_t at, std::size_t n, double std_dev) {
    for (std::size_t i = 0; i < n; ++i) params_[at + i] = std_dev * rng.normal();
  };
  const double residual_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(config_.n_blocks));
  const std::size_t e = config_.embed_dim;
  for (const auto& block : layout_.blocks) {
    for (const auto* s : {&block.antenna, &block.subcarrier}) {
      std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(s->ln_gain), s->width, 1.0);
      fill(s->w1, s->hidden * s->width, 1.0 / std::sqrt(static_cast<double>(s->width)));
      fill(s->w2, s->width * s->hidden, residual_scale / std::sqrt(static_cast<double>(s->hidden)));
    }
    for (const auto& site : block.sites) {
      fill(site.sub_w, 2 * config_.n_a * e, 0.5 / std::sqrt(static_cast<double>(e)));
      fill(site.ant_w, 2 * config_.n_c * e, 0.5 / std::sqrt(static_cast<double>(e)));
    }
  }
  fill(layout_.head_w, 4, 0.5);
}

MixerModel::MixerModel(MixerConfig config, std::vector<double> parameters)
    : config_(config), layout_(ParameterLayout::build(config)), schedule_(config.max_time),
      params_(std::move(parameters)), features_(feature_table(config)) {
  if (params_.size() != layout_.total) throw ShapeError("mixer model: parameter count does not match config");
}

MixerModel::~MixerModel() = default;
MixerModel::MixerModel(const MixerModel&) = default;
MixerModel& MixerModel::operator=(const MixerModel&) = default;
MixerModel::MixerModel(MixerModel&&) noexcept = default;
MixerModel& MixerModel::operator=(MixerModel&&) noexcept = default;

namespace {

struct SublayerParams {
  ConstVecMap gain, bias;
  ConstRowMap w1;
  ConstVecMap b1;
  ConstRowMap w2;
  ConstVecMap b2;
};

SublayerParams sublayer_params(const double* p, const ParameterLayout::Sublayer& s) {
  const auto w = static_cast<Eigen::Index>(s.width), h = static_cast<Eigen::Index>(s.hidden);
  return {ConstVecMap(p + s.ln_gain, w), ConstVecMap(p + s.ln_bias, w), ConstRowMap(p + s.w1, h, w),
          ConstVecMap(p + s.b1, h),      ConstRowMap(p + s.w2, w, h),   ConstVecMap(p + s.b2, w)};
}

// Normalization statistics are taken over each sample (`tokens` consecutive
// columns) so the branch keeps the relative amplitude of its tokens.
Mat sublayer_forward(const Mat& z, const Mat* injection, const SublayerParams& p, Activation activation,
                     Eigen::Index tokens, SublayerCache* cache) {
  const Mat zb = injection ? Mat(z + *injection) : z;
  const Eigen::Index batch = zb.cols() / tokens;
  Mat normalized(zb.rows(), zb.cols());
  Eigen::VectorXd inv_std(batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    const auto block = zb.middleCols(b * tokens, tokens);
    const double mean = block.mean();
    const double var = (block.array() - mean).square().mean();
    inv_std(b) = 1.0 / std::sqrt(var + kLayerNormEps);
    normalized.middleCols(b * tokens, tokens) = (block.array() - mean) * inv_std(b);
  }
  const Mat affine = (normalized.array().colwise() * p.gain.array()).colwise() + p.bias.array();
  const Mat pre = (p.w1 * affine).colwise() + p.b1;
  Mat act = pre;
  if (activation == Activation::Gelu) act = pre.unaryExpr(&gelu);
  Mat out = (p.w2 * act).colwise() + p.b2;
  if (cache) {
    cache->normalized = normalized;
    cache->inv_std = inv_std;
    cache->affine = affine;
    cache->pre = pre;
    cache->act = std::move(act);
  }
  return out;
}

// Returns the gradient with respect to the branch input (z + injection).
Mat sublayer_backward(const Mat& d_out, const SublayerCache& cache, const SublayerParams& p,
                      const ParameterLayout::Sublayer& s, Activation activation, double* grad) {
  const auto w = static_cast<Eigen::Index>(s.width), h = static_cast<Eigen::Index>(s.hidden);
  RowMap(grad + s.w2, w, h).noalias() += d_out * cache.act.transpose();
  VecMap(grad + s.b2, w) += d_out.rowwise().sum();
  Mat d_act = p.w2.transpose() * d_out;
  if (activation == Activation::Gelu) d_act.array() *= cache.pre.unaryExpr(&gelu_grad).array();
  RowMap(grad + s.w1, h, w).noalias() += d_act * cache.affine.transpose();
  VecMap(grad + s.b1, h) += d_act.rowwise().sum();
  const Mat d_affine = p.w1.transpose() * d_act;
  VecMap(grad + s.ln_gain, w) += (d_affine.array() * cache.normalized.array()).rowwise().sum().matrix();
  VecMap(grad + s.ln_bias, w) += d_affine.rowwise().sum();
  const Mat d_norm = d_affine.array().colwise() * p.gain.array();
  const Eigen::Index tokens = d_norm.cols() / cache.inv_std.size();
  const double count = static_cast<double>(d_norm.rows() * tokens);
  Mat d_in(d_norm.rows(), d_norm.cols());
  for (Eigen::Index b = 0; b < cache.inv_std.size(); ++b) {
    const auto dn = d_norm.middleCols(b * tokens, tokens);
    const auto n = cache.normalized.middleCols(b * tokens, tokens);
    const double sum_d = dn.sum();
    const double sum_dn = (dn.array() * n.array()).sum();
    d_in.middleCols(b * tokens, tokens) =
        (count * dn.array() - sum_d - n.array() * sum_dn) * (cache.inv_std(b) / count);
  }
  return d_in;
}

}  // namespace

std::vector<double> MixerModel::embed_time(int t, std::size_t block, Site site, TimeAxis axis) const {
  if (t < 0 || t > config_.max_time) throw DomainError("embed_time: t outside [0, T]");
  const auto& tables = layout_.blocks.at(block).sites[static_cast<int>(site)];
  const auto e = static_cast<Eigen::Index>(config_.embed_dim);
  const ConstVecMap f(features_.data() + static_cast<std::size_t>(t) * config_.embed_dim, e);
  const bool sub = axis == TimeAxis::PerSubcarrier;
  const auto rows = static_cast<Eigen::Index>(sub ? 2 * config_.n_a : 2 * config_.n_c);
  const Eigen::VectorXd v = ConstRowMap(params_.data() + (sub ? tables.sub_w : tables.ant_w), rows, e) * f +
                            ConstVecMap(params_.data() + (sub ? tables.sub_b : tables.ant_b), rows);
  return {v.data(), v.data() + v.size()};
}

std::vector<double> MixerModel::forward(std::span<const double> x, const TimeMatrix& tau) const {
  return forward(std::vector<std::vector<double>>{std::vector<double>(x.begin(), x.end())}, {tau}, nullptr).front();
}

namespace {

struct InjectionContext {
  const MixerConfig& config;
  const ParameterLayout::Block& block;
  const double* params;
  const Mat& emb_sub;
  const Mat& emb_ant;
};

// Sum of the active embedding tables at `site`, expressed in `layout`; false when nothing is injected.
bool injection(const InjectionContext& ctx, Site site, Layout layout, Mat& out) {
  const auto& tables = ctx.block.sites[static_cast<int>(site)];
  const auto e = static_cast<Eigen::Index>(ctx.config.embed_dim);
  const auto wa = static_cast<Eigen::Index>(2 * ctx.config.n_a), wc = static_cast<Eigen::Index>(2 * ctx.config.n_c);
  bool any = false;
  if (site_active(ctx.config.scheme, site, TimeAxis::PerSubcarrier)) {
    Mat j = (ConstRowMap(ctx.params + tables.sub_w, wa, e) * ctx.emb_sub).colwise() +
            ConstVecMap(ctx.params + tables.sub_b, wa);
    if (layout == Layout::Subcarrier) j = antenna_to_subcarrier(j, ctx.config.n_a, ctx.config.n_c);
    out = std::move(j);
    any = true;
  }
  if (site_active(ctx.config.scheme, site, TimeAxis::PerAntenna)) {
    Mat j = (ConstRowMap(ctx.params + tables.ant_w, wc, e) * ctx.emb_ant).colwise() +
            ConstVecMap(ctx.params + tables.ant_b, wc);
    if (layout == Layout::Antenna) j = subcarrier_to_antenna(j, ctx.config.n_a, ctx.config.n_c);
    if (any) {
      out += j;
    } else {
      out = std::move(j);
    }
    any = true;
  }
  return any;
}

void injection_backward(const InjectionContext& ctx, Site site, Layout layout, const Mat& d_j, double* grad) {
  const auto& tables = ctx.block.sites[static_cast<int>(site)];
  const auto e = static_cast<Eigen::Index>(ctx.config.embed_dim);
  const auto wa = static_cast<Eigen::Index>(2 * ctx.config.n_a), wc = static_cast<Eigen::Index>(2 * ctx.config.n_c);
  if (site_active(ctx.config.scheme, site, TimeAxis::PerSubcarrier)) {
    const Mat d = layout == Layout::Subcarrier ? subcarrier_to_antenna(d_j, ctx.config.n_a, ctx.config.n_c) : d_j;
    RowMap(grad + tables.sub_w, wa, e).noalias() += d * ctx.emb_sub.transpose();
    VecMap(grad + tables.sub_b, wa) += d.rowwise().sum();
  }
  if (site_active(ctx.config.scheme, site, TimeAxis::PerAntenna)) {
    const Mat d = layout == Layout::Antenna ? antenna_to_subcarrier(d_j, ctx.config.n_a, ctx.config.n_c) : d_j;
    RowMap(grad + tables.ant_w, wc, e).noalias() += d * ctx.emb_ant.transpose();
    VecMap(grad + tables.ant_b, wc) += d.rowwise().sum();
  }
}

}  // namespace

std::vector<std::vector<double>> MixerModel::forward(const std::vector<std::vector<double>>& xs,
                                                     const std::vector<TimeMatrix>& taus,
                                                     ForwardCache* cache) const {
  const std::size_t na = config_.n_a, nc = config_.n_c, batch = xs.size(), e = config_.embed_dim;
  if (taus.size() != batch) throw ShapeError("mixer forward: batch size mismatch");
  const auto ena = static_cast<Eigen::Index>(na), enc = static_cast<Eigen::Index>(nc);

  Mat stream(static_cast<Eigen::Index>(2 * na), static_cast<Eigen::Index>(batch * nc));
  Mat emb_sub(static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(batch * nc));
  Mat emb_ant(static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(batch * na));
  for (std::size_t b = 0; b < batch; ++b) {
    if (xs[b].size() != 2 * na * nc) throw ShapeError("mixer forward: input shape does not match config");
    if (taus[b].rows() != na || taus[b].cols() != nc) throw ShapeError("mixer forward: tau shape does not match config");
    for (std::size_t p = 0; p < 2; ++p)
      for (std::size_t a = 0; a < na; ++a)
        for (std::size_t c = 0; c < nc; ++c)
          stream(static_cast<Eigen::Index>(p * na + a), static_cast<Eigen::Index>(b * nc + c)) =
              xs[b][p * na * nc + a * nc + c];
    const auto reduced = reduce_time(taus[b], config_.averaging, schedule_);
    for (std::size_t c = 0; c < nc; ++c)
      emb_sub.col(static_cast<Eigen::Index>(b * nc + c)) =
          ConstVecMap(features_.data() + static_cast<std::size_t>(reduced.tau_a[c]) * e, static_cast<Eigen::Index>(e));
    for (std::size_t a = 0; a < na; ++a)
      emb_ant.col(static_cast<Eigen::Index>(b * na + a)) =
          ConstVecMap(features_.data() + static_cast<std::size_t>(reduced.tau_c[a]) * e, static_cast<Eigen::Index>(e));
  }

  ForwardCache::Impl* store = cache ? cache->impl_.get() : nullptr;
  if (store) store->blocks.assign(layout_.blocks.size(), {});

  const double* p = params_.data();
  Mat inj;
  for (std::size_t k = 0; k < layout_.blocks.size(); ++k) {
    const auto& block = layout_.blocks[k];
    const InjectionContext ctx{config_, block, p, emb_sub, emb_ant};

    const bool in_a = injection(ctx, Site::AntennaIn, Layout::Antenna, inj);
    Mat branch = sublayer_forward(stream, in_a ? &inj : nullptr, sublayer_params(p, block.antenna),
                                  config_.activation, enc, store ? &store->blocks[k].antenna : nullptr);
    stream += branch;
    if (injection(ctx, Site::AntennaOut, Layout::Antenna, inj)) stream += inj;

    Mat sub = antenna_to_subcarrier(stream, na, nc);
    const bool in_c = injection(ctx, Site::SubcarrierIn, Layout::Subcarrier, inj);
    branch = sublayer_forward(sub, in_c ? &inj : nullptr, sublayer_params(p, block.subcarrier), config_.activation,
                              ena, store ? &store->blocks[k].subcarrier : nullptr);
    sub += branch;
    if (injection(ctx, Site::SubcarrierOut, Layout::Subcarrier, inj)) sub += inj;
    stream = subcarrier_to_antenna(sub, na, nc);
  }

  const ConstRowMap head(p + layout_.head_w, 2, 2);
  std::vector<std::vector<double>> outputs(batch, std::vector<double>(2 * na * nc));
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t q = 0; q < 2; ++q)
      for (std::size_t a = 0; a < na; ++a)
        for (std::size_t c = 0; c < nc; ++c) {
          const auto col = static_cast<Eigen::Index>(b * nc + c);
          const auto ia = static_cast<Eigen::Index>(a);
          outputs[b][q * na * nc + a * nc + c] = head(static_cast<Eigen::Index>(q), 0) * stream(ia, col) +
                                                 head(static_cast<Eigen::Index>(q), 1) * stream(ena + ia, col) +
                                                 p[layout_.head_b + q];
        }

  if (store) {
    store->batch = batch;
    store->emb_sub = std::move(emb_sub);
    store->emb_ant = std::move(emb_ant);
    store->stream_out = std::move(stream);
  }
  return outputs;
}

void MixerModel::backward(const ForwardCache& cache, const std::vector<std::vector<double>>& upstream,
                          std::span<double> grad) const {
  const ForwardCache::Impl& store = *cache.impl_;
  const std::size_t na = config_.n_a, nc = config_.n_c, batch = store.batch;
  if (upstream.size() != batch) throw ShapeError("mixer backward: batch size mismatch");
  if (grad.size() != params_.size()) throw ShapeError("mixer backward: gradient size mismatch");
  if (store.blocks.size() != layout_.blocks.size()) throw ShapeError("mixer backward: cache was not filled");
  const double* p = params_.data();
  double* g = grad.data();
  const ConstRowMap head(p + layout_.head_w, 2, 2);
  const auto ena = static_cast<Eigen::Index>(na);

  Mat d_stream = Mat::Zero(static_cast<Eigen::Index>(2 * na), static_cast<Eigen::Index>(batch * nc));
  for (std::size_t b = 0; b < batch; ++b) {
    if (upstream[b].size() != 2 * na * nc) throw ShapeError("mixer backward: upstream shape mismatch");
    for (std::size_t q = 0; q < 2; ++q)
      for (std::size_t a = 0; a < na; ++a)
        for (std::size_t c = 0; c < nc; ++c) {
          const double dy = upstream[b][q * na * nc + a * nc + c];
          const auto col = static_cast<Eigen::Index>(b * nc + c);
          const auto ia = static_cast<Eigen::Index>(a);
          g[layout_.head_w + 2 * q] += dy * store.stream_out(ia, col);
          g[layout_.head_w + 2 * q + 1] += dy * store.stream_out(ena + ia, col);
          g[layout_.head_b + q] += dy;
          d_stream(ia, col) += head(static_cast<Eigen::Index>(q), 0) * dy;
          d_stream(ena + ia, col) += head(static_cast<Eigen::Index>(q), 1) * dy;
        }
  }

  for (std::size_t k = layout_.blocks.size(); k-- > 0;) {
    const auto& block = layout_.blocks[k];
    const InjectionContext ctx{config_, block, p, store.emb_sub, store.emb_ant};

    Mat d_sub = antenna_to_subcarrier(d_stream, na, nc);
    injection_backward(ctx, Site::SubcarrierOut, Layout::Subcarrier, d_sub, g);
    Mat d_branch_in = sublayer_backward(d_sub, store.blocks[k].subcarrier, sublayer_params(p, block.subcarrier),
                                        block.subcarrier, config_.activation, g);
    injection_backward(ctx, Site::SubcarrierIn, Layout::Subcarrier, d_branch_in, g);
    d_sub += d_branch_in;

    d_stream = subcarrier_to_antenna(d_sub, na, nc);
    injection_backward(ctx, Site::AntennaOut, Layout::Antenna, d_stream, g);
    d_branch_in = sublayer_backward(d_stream, store.blocks[k].antenna, sublayer_params(p, block.antenna),
                                    block.antenna, config_.activation, g);
    injection_backward(ctx, Site::AntennaIn, Layout::Antenna, d_branch_in, g);
    d_stream += d_branch_in;
  }
}

// --- denoiser ------------------------------------------------------------------

std::vector<double> MixerDenoiser::denoise(const DenoiserQuery& query) const {
  const auto v = model_->forward(query.network_input, query.tau);
  return recover_x0(query.state, v, query.alpha, query.beta);
}

// --- checkpoint ----------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'N', 'I', 'D', 'M'};
constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v));
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw IoError("checkpoint: truncated file");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

std::uint64_t get_u64(std::istream& in) {
  const std::uint64_t lo = get_u32(in);
  const std::uint64_t hi = get_u32(in);
  return lo | hi << 32;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const MixerModel& model, NormalizationMode norm) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("checkpoint: cannot open " + path.string() + " for writing");
  const auto& c = model.config();
  out.write(kCheckpointMagic, 4);
  put_u32(out, kCheckpointVersion);
  for (std::size_t v : {c.n_a, c.n_c, c.n_blocks, c.hidden_mult, c.embed_dim}) put_u32(out, static_cast<std::uint32_t>(v));
  put_u32(out, static_cast<std::uint32_t>(c.scheme));
  put_u32(out, static_cast<std::uint32_t>(c.averaging));
  put_u32(out, static_cast<std::uint32_t>(c.activation));
  put_u32(out, static_cast<std::uint32_t>(c.max_time));
  put_u32(out, static_cast<std::uint32_t>(norm));
  put_u64(out, model.parameter_count());
  for (double x : model.parameters()) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, sizeof bits);
    put_u64(out, bits);
  }
  if (!out) throw IoError("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw IoError("checkpoint: bad magic");
  if (get_u32(in) != kCheckpointVersion) throw IoError("checkpoint: unsupported version");
  MixerConfig c;
  c.n_a = get_u32(in);
  c.n_c = get_u32(in);
  c.n_blocks = get_u32(in);
  c.hidden_mult = get_u32(in);
  c.embed_dim = get_u32(in);
  const auto scheme = get_u32(in), averaging = get_u32(in), activation = get_u32(in);
  if (scheme > 2 || averaging > 1 || activation > 1) throw IoError("checkpoint: bad enum field");
  c.scheme = static_cast<EmbeddingScheme>(scheme);
  c.averaging = static_cast<TimeAveraging>(averaging);
  c.activation = static_cast<Activation>(activation);
  c.max_time = static_cast<int>(get_u32(in));
  const auto norm = get_u32(in);
  if (norm > 1) throw IoError("checkpoint: bad normalization field");
  try {
    c.validate();
  } catch (const DomainError& e) {
    throw IoError(std::string("checkpoint: ") + e.what());
  }
  const std::uint64_t count = get_u64(in);
  if (count != MixerModel::parameter_count(c)) throw IoError("checkpoint: parameter count does not match config");
  std::vector<double> params(count);
  for (auto& x : params) {
    const std::uint64_t bits = get_u64(in);
    std::memcpy(&x, &bits, sizeof x);
  }
  return {MixerModel(c, std::move(params)), static_cast<NormalizationMode>(norm)};
}

}  // namespace nid
