#include "commands.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>

#include <CLI11.hpp>

#include "nid/oracle.hpp"

namespace nid::cli {

using ojson = nlohmann::ordered_json;

namespace {

std::string number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// CSV with a provenance comment line, LF endings, '.' decimals.
class CsvFile {
 public:
  CsvFile(const std::filesystem::path& path, const std::string& header_comment, const std::vector<std::string>& columns)
      : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw IoError("cannot open " + path.string() + " for writing");
    out_ << header_comment << '\n';
    row(columns);
  }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
    if (!out_) throw IoError("write failed for " + path_.string());
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

void write_json(const std::filesystem::path& path, const ojson& doc) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << doc.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

ChannelDataset load_matching(const std::filesystem::path& path, const RunConfig& config, std::ostream& log) {
  auto read = read_dataset(path);
  if (read.data.n_a != config.dataset.n_a || read.data.n_c != config.dataset.n_c)
    throw ConfigError("dataset " + path.string() + " is " + std::to_string(read.data.n_a) + "x" +
                      std::to_string(read.data.n_c) + ", config expects " + std::to_string(config.dataset.n_a) + "x" +
                      std::to_string(config.dataset.n_c));
  if (read.renormalized > 0)
    log << "note: re-normalized " << read.renormalized << " samples of " << path.string() << '\n';
  return std::move(read.data);
}

Checkpoint load_matching(const std::filesystem::path& path, const RunConfig& config) {
  auto ck = load_checkpoint(path);
  if (ck.model.config().n_a != config.dataset.n_a || ck.model.config().n_c != config.dataset.n_c)
    throw ConfigError("checkpoint " + path.string() + " does not match the dataset dimensions");
  return ck;
}

std::filesystem::path or_default(const std::filesystem::path& p, const std::filesystem::path& fallback) {
  return p.empty() ? fallback : p;
}

}  // namespace

Context Context::make(const ojson& doc, std::ostream& log) {
  Context ctx;
  ctx.config = parse_config(doc);
  ctx.resolved = to_json(ctx.config);
  ctx.hash = config_hash(ctx.resolved);
  ctx.log = &log;
  return ctx;
}

std::string Context::hash_hex() const {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

std::string Context::header(const std::string& verb) const {
  return "# nid " + verb + " config_hash=" + hash_hex() + " seed=" + std::to_string(config.seed);
}

// --- generation -----------------------------------------------------------

double GenerationOutcome::mean() const {
  return final_nmse.empty() ? 0.0 : std::accumulate(final_nmse.begin(), final_nmse.end(), 0.0) / final_nmse.size();
}

double GenerationOutcome::stddev() const {
  if (final_nmse.size() < 2) return 0.0;
  const double m = mean();
  double s = 0.0;
  for (double x : final_nmse) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(final_nmse.size() - 1));
}

GenerationOutcome run_generation(const MixerModel& model, NormalizationMode norm, const ChannelDataset& test,
                                 const GenerationCase& c) {
  if (test.n_a != model.config().n_a || test.n_c != model.config().n_c)
    throw ShapeError("generation: test set and model disagree on dimensions");
  const std::size_t n = c.samples == 0 ? test.size() : std::min(c.samples, test.size());
  if (n == 0) throw DomainError("generation: empty test set");
  const Schedule& schedule = model.schedule();
  const MixerDenoiser denoiser(model);
  GenerateOptions options;
  options.steps = c.steps;
  options.stepping = c.stepping;
  options.eps_hybrid = c.eps_hybrid;
  options.norm = norm;
  options.keep_trajectory = true;

  GenerationOutcome out;
  out.mean_tau.assign(static_cast<std::size_t>(c.steps) + 1, 0.0);
  out.nmse.assign(static_cast<std::size_t>(c.steps) + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& h = test.samples[i];
    Rng rng = Rng::stream(c.seed, i);
    const Reliability rel = make_reliability(c.init, test.n_a, test.n_c, rng);
    const auto observed = observe(h, rel.reliability, rng);
    const DiffusionInit init = init_diffusion_state(observed, rel.reliability, schedule);
    const TimeMatrix tau0 = c.identical ? identical_time(init.tau0, schedule) : init.tau0;
    const auto result = generate(denoiser, schedule, init.h_init, tau0, options, rng);
    // A zero start finishes at once; hold its state for the remaining rows.
    for (std::size_t k = 0; k < out.nmse.size(); ++k) {
      const auto& snap = result.trajectory[std::min(k, result.trajectory.size() - 1)];
      out.mean_tau[k] += snap.mean_tau;
      out.nmse[k] += nmse(snap.state, h);
    }
    out.final_nmse.push_back(nmse(result.sample, h));
  }
  for (std::size_t k = 0; k < out.nmse.size(); ++k) {
    out.mean_tau[k] /= static_cast<double>(n);
    out.nmse[k] /= static_cast<double>(n);
  }
  return out;
}

// --- verbs ------------------------------------------------------------------

int cmd_dataset(const Context& ctx) {
  const auto& c = ctx.config;
  auto& log = *ctx.log;
  ensure_dir(c.output_dir);
  const auto train = synth_dataset(c.dataset.synth, c.dataset.n_a, c.dataset.n_c, c.dataset.train_samples, c.seed);
  const auto test = synth_dataset(c.dataset.synth, c.dataset.n_a, c.dataset.n_c, c.dataset.test_samples, c.seed,
                                  c.dataset.train_samples);
  write_dataset(c.train_path(), train);
  write_dataset(c.test_path(), test);
  double worst = 0.0;
  for (const auto* set : {&train, &test})
    for (const auto& s : set->samples) {
      double sq = 0.0;
      for (double x : s) sq += x * x;
      worst = std::max(worst, std::abs(std::sqrt(sq / static_cast<double>(s.size())) - 1.0));
    }
  log << "dataset " << c.dataset.n_a << "x" << c.dataset.n_c << ": " << train.size() << " train -> "
      << c.train_path().string() << ", " << test.size() << " test -> " << c.test_path().string()
      << ", max norm deviation " << number(worst) << '\n';
  return kOk;
}

int cmd_train(const Context& ctx, const TrainOptions& options) {
  const auto& c = ctx.config;
  auto& log = *ctx.log;
  ensure_dir(c.output_dir);
  const ChannelDataset data = load_matching(c.train_path(), c, log);

  if (!options.grid) {
    MixerModel model(c.model, c.seed);
    log << "training " << model.parameter_count() << " parameters on " << data.size() << " samples\n";
    const auto result = train(model, data, c.train, [&](const EpochRecord& r) {
      log << "epoch " << r.epoch << " loss " << number(r.mean_loss) << " (" << number(r.seconds) << " s)\n";
    });
    save_checkpoint(c.output_dir / "model.nidm", model, c.train.norm);
    CsvFile csv(c.output_dir / "loss.csv", ctx.header("train"), {"epoch", "mean_loss"});
    for (const auto& r : result.history) csv.row({std::to_string(r.epoch), number(r.mean_loss)});
    if (result.stopped_early) log << "stopped on plateau after " << result.history.size() << " epochs\n";
    return kOk;
  }

  ensure_dir(c.output_dir / "grid");
  CsvFile csv(c.output_dir / "grid.csv", ctx.header("train --grid"),
              {"norm", "scheme", "averaging", "final_loss", "best_loss"});
  for (auto norm : {NormalizationMode::IdenticalTotalPower, NormalizationMode::IdenticalNoisePower})
    for (auto scheme : {EmbeddingScheme::RowWise, EmbeddingScheme::ColumnWise, EmbeddingScheme::Together})
      for (auto averaging : {TimeAveraging::TauAvg, TimeAveraging::AlphaAvg}) {
        MixerConfig mc = c.model;
        mc.scheme = scheme;
        mc.averaging = averaging;
        TrainConfig tc = c.train;
        tc.norm = norm;
        tc.checkpoint_every = 0;
        MixerModel model(mc, c.seed);
        const auto result = train(model, data, tc);
        double best = result.history.front().mean_loss;
        for (const auto& r : result.history) best = std::min(best, r.mean_loss);
        const std::string tag = to_string(norm) + "_" + to_string(scheme) + "_" + to_string(averaging);
        save_checkpoint(c.output_dir / "grid" / (tag + ".nidm"), model, norm);
        csv.row({to_string(norm), to_string(scheme), to_string(averaging), number(result.history.back().mean_loss),
                 number(best)});
        log << tag << ": final " << number(result.history.back().mean_loss) << '\n';
      }
  return kOk;
}

int cmd_generate(const Context& ctx, const GenerateOptionsCli& options) {
  const auto& c = ctx.config;
  auto& log = *ctx.log;
  ensure_dir(c.output_dir);
  const ChannelDataset test = load_matching(c.test_path(), c, log);
  const Checkpoint ck = load_matching(or_default(options.checkpoint, c.output_dir / "model.nidm"), c);

  GenerationCase base;
  base.init = c.generate.init_spec();
  base.stepping = c.generate.stepping;
  base.steps = c.generate.steps;
  base.eps_hybrid = c.generate.eps_hybrid;
  base.seed = c.seed;
  base.samples = c.generate.samples;

  if (options.sweep) {
    const std::vector<InitPatternKind> patterns{InitPatternKind::Exp, InitPatternKind::Salt, InitPatternKind::SaltRec,
                                                InitPatternKind::Pilot, InitPatternKind::PilotCar};
    std::vector<std::string> columns{"stepping"};
    for (auto p : patterns) columns.push_back(to_string(p));
    CsvFile csv(c.output_dir / "sweep.csv", ctx.header("generate --sweep"), columns);
    for (const auto& rule : SteppingRule::sweep()) {
      std::vector<std::string> cells{rule.name()};
      for (auto p : patterns) {
        GenerationCase gc = base;
        gc.stepping = rule;
        gc.init = c.generate.init_spec(p);
        cells.push_back(number(run_generation(ck.model, ck.norm, test, gc).mean()));
      }
      csv.row(cells);
      log << rule.name() << " done\n";
    }
    return kOk;
  }

  if (options.compare_identical) {
    const Checkpoint baseline =
        options.baseline_checkpoint.empty() ? ck : load_matching(options.baseline_checkpoint, c);
    const std::vector<InitPatternKind> patterns{InitPatternKind::White, InitPatternKind::Salt, InitPatternKind::SaltRec,
                                                InitPatternKind::PilotCar};
    CsvFile csv(c.output_dir / "compare.csv", ctx.header("generate --compare-identical"),
                {"pattern", "step", "nmse_non_identical", "nmse_identical"});
    for (auto p : patterns) {
      GenerationCase gc = base;
      gc.init = c.generate.init_spec(p);
      const auto non_identical = run_generation(ck.model, ck.norm, test, gc);
      gc.identical = true;
      const auto identical = run_generation(baseline.model, baseline.norm, test, gc);
      for (std::size_t k = 0; k < non_identical.nmse.size(); ++k)
        csv.row({to_string(p), std::to_string(k), number(non_identical.nmse[k]), number(identical.nmse[k])});
      log << to_string(p) << ": non-identical " << number(non_identical.mean()) << ", identical "
          << number(identical.mean()) << '\n';
    }
    return kOk;
  }

  const auto outcome = run_generation(ck.model, ck.norm, test, base);
  CsvFile csv(c.output_dir / "trajectory.csv", ctx.header("generate"), {"step", "mean_tau", "nmse"});
  for (std::size_t k = 0; k < outcome.nmse.size(); ++k)
    csv.row({std::to_string(k), number(outcome.mean_tau[k]), number(outcome.nmse[k])});
  ojson summary;
  summary["config_hash"] = ctx.hash_hex();
  summary["seed"] = c.seed;
  summary["init_pattern"] = to_string(c.generate.init_pattern);
  summary["snr_db"] = base.init.snr_db;
  summary["stepping"] = c.generate.stepping.name();
  summary["steps"] = c.generate.steps;
  summary["eps_hybrid"] = c.generate.eps_hybrid;
  summary["samples"] = outcome.final_nmse.size();
  summary["final_nmse_mean"] = outcome.mean();
  summary["final_nmse_std"] = outcome.stddev();
  write_json(c.output_dir / "summary.json", summary);
  log << "final NMSE " << number(outcome.mean()) << " +- " << number(outcome.stddev()) << " over "
      << outcome.final_nmse.size() << " samples\n";
  return kOk;
}

int cmd_eval(const Context& ctx, const std::filesystem::path& checkpoint) {
  const auto& c = ctx.config;
  auto& log = *ctx.log;
  ensure_dir(c.output_dir);
  const ChannelDataset test = load_matching(c.test_path(), c, log);
  const Checkpoint ck = load_matching(or_default(checkpoint, c.output_dir / "model.nidm"), c);

  std::vector<std::string> columns{"stepping"};
  for (auto p : c.eval.patterns) {
    columns.push_back(to_string(p) + "_mean");
    columns.push_back(to_string(p) + "_std");
  }
  CsvFile csv(c.output_dir / "eval.csv", ctx.header("eval"), columns);
  for (const auto& rule : c.eval.stepping) {
    std::vector<std::string> cells{rule.name()};
    for (auto p : c.eval.patterns) {
      std::vector<double> per_seed;
      for (std::size_t s = 0; s < c.eval.seeds; ++s) {
        GenerationCase gc;
        gc.init = c.generate.init_spec(p);
        gc.stepping = rule;
        gc.steps = c.generate.steps;
        gc.eps_hybrid = c.generate.eps_hybrid;
        gc.seed = c.seed + s;
        gc.samples = c.generate.samples;
        per_seed.push_back(run_generation(ck.model, ck.norm, test, gc).mean());
      }
      const double mean = std::accumulate(per_seed.begin(), per_seed.end(), 0.0) / per_seed.size();
      double var = 0.0;
      for (double x : per_seed) var += (x - mean) * (x - mean);
      cells.push_back(number(mean));
      cells.push_back(per_seed.size() > 1 ? number(std::sqrt(var / (per_seed.size() - 1))) : "");
    }
    csv.row(cells);
    log << rule.name() << " done\n";
  }
  return kOk;
}

int cmd_oracle(const Context& ctx) {
  const auto& c = ctx.config;
  auto& log = *ctx.log;
  ensure_dir(c.output_dir);
  const Schedule schedule(c.max_time);

  Theorem1Config t1;
  t1.n_samples = c.oracle.n_samples;
  t1.n_substeps = c.oracle.substeps;
  t1.seed = c.seed;
  t1.tau_final = {c.max_time / 2.0, c.max_time / 4.0};
  const auto r1 = check_theorem1(t1, schedule);

  Theorem2Config t2;
  t2.n_samples = c.oracle.n_samples;
  t2.steps = c.oracle.steps;
  t2.seed = c.seed;
  t2.eps_hybrid = c.oracle.eps_hybrid;
  t2.denoiser_bias = c.oracle.denoiser_bias;
  t2.starts = {{c.max_time / 2.0, c.max_time / 4.0}};
  const auto r2 = check_theorem2(t2, schedule);

  ojson report;
  report["config_hash"] = ctx.hash_hex();
  report["seed"] = c.seed;
  report["theorem1"] = ojson::parse(to_json(r1, t1));
  report["theorem2"] = ojson::parse(to_json(r2, t2));
  report["passed"] = r1.passed && r2.passed;
  write_json(c.output_dir / "oracle.json", report);

  log << "forward law: energy " << number(r1.energy) << ", max |z| " << number(r1.moments.max_abs_z())
      << (r1.passed ? " PASS" : " FAIL") << '\n';
  for (const auto& k : r2.cases)
    log << "reverse " << k.rule << " eps " << number(k.eps) << ": energy " << number(k.energy) << ", max |z| "
        << number(k.moments.max_abs_z()) << (k.passed ? " PASS" : " FAIL") << '\n';
  for (const auto& p : r2.pairs)
    log << "pair " << p.rule_a << " / " << p.rule_b << " eps " << number(p.eps) << ": energy " << number(p.energy)
        << (p.passed ? " PASS" : " FAIL") << '\n';
  return r1.passed && r2.passed ? kOk : kToleranceFailure;
}

// --- entry point ----------------------------------------------------------

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"nid: non-identical diffusion for MIMO-OFDM channel generation"};
  app.require_subcommand(1);
  std::string config_path, out_dir;
  std::vector<std::string> overrides;
  std::int64_t seed = -1;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run configuration");
    sub->add_option("--seed", seed, "Seed (overrides the config)")->check(CLI::NonNegativeNumber);
    sub->add_option("--out", out_dir, "Output directory (overrides the config)");
    sub->add_option("--set", overrides, "Override a config key, e.g. --set train.epochs=5");
  };

  auto* dataset = app.add_subcommand("dataset", "Synthesize train and test channel files");
  auto* train_cmd = app.add_subcommand("train", "Train a denoiser");
  auto* gen = app.add_subcommand("generate", "Recover channels from noisy observations");
  auto* eval = app.add_subcommand("eval", "Final NMSE per pattern and stepping rule over several seeds");
  auto* oracle = app.add_subcommand("oracle", "Check the forward and reverse processes against a GMM prior");
  for (auto* s : {dataset, train_cmd, gen, eval, oracle}) common(s);

  TrainOptions train_options;
  train_cmd->add_flag("--grid", train_options.grid, "Train all normalization x scheme x averaging variants");
  GenerateOptionsCli gen_options;
  std::string checkpoint, baseline;
  gen->add_option("--checkpoint", checkpoint, "Model checkpoint (default <out>/model.nidm)");
  gen->add_option("--baseline-checkpoint", baseline, "Model for the identical baseline");
  gen->add_flag("--compare-identical", gen_options.compare_identical, "Non-identical vs identical curves");
  gen->add_flag("--sweep", gen_options.sweep, "Stepping rule x initialization pattern grid");
  eval->add_option("--checkpoint", checkpoint, "Model checkpoint (default <out>/model.nidm)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    ojson doc = ojson::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw IoError("cannot open config " + config_path);
      try {
        doc = ojson::parse(in);
      } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config " + config_path + ": " + e.what());
      }
      doc = merge_config(default_config_json(), doc);
    } else {
      doc = default_config_json();
    }
    for (const auto& o : overrides) apply_override(doc, o);
    if (seed >= 0) doc["seed"] = static_cast<std::uint64_t>(seed);
    if (!out_dir.empty()) doc["output_dir"] = out_dir;
    const Context ctx = Context::make(doc, out);

    gen_options.checkpoint = checkpoint;
    gen_options.baseline_checkpoint = baseline;
    if (gen_options.sweep && gen_options.compare_identical)
      throw ConfigError("--sweep and --compare-identical are exclusive");
    if (*dataset) return cmd_dataset(ctx);
    if (*train_cmd) return cmd_train(ctx, train_options);
    if (*gen) return cmd_generate(ctx, gen_options);
    if (*eval) return cmd_eval(ctx, checkpoint);
    return cmd_oracle(ctx);
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kIoFailure;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kIoFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }
}

}  // namespace nid::cli
