#include <benchmark/benchmark.h>

#include "nid/backbone.hpp"
#include "nid/oracle.hpp"
#include "nid/schedule.hpp"

using namespace nid;

static void BM_Waterfilling(benchmark::State& state) {
  const auto n_a = static_cast<std::size_t>(state.range(0)), n_c = static_cast<std::size_t>(state.range(1));
  Rng rng(1);
  TimeMatrix tau(n_a, n_c);
  for (std::size_t i = 0; i < tau.size(); ++i) tau[i] = rng.uniform(0.0, 1000.0);
  const double budget = 0.02 * total(tau.values());
  for (auto _ : state) benchmark::DoNotOptimize(step_waterfilling(tau, budget));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(tau.size()));
}
BENCHMARK(BM_Waterfilling)->Args({8, 16})->Args({32, 64});

static MixerConfig bench_config() {
  MixerConfig c;
  c.n_a = 8;
  c.n_c = 16;
  return c;
}

static std::pair<std::vector<std::vector<double>>, std::vector<TimeMatrix>> batch(std::size_t b) {
  Rng rng(2);
  std::vector<std::vector<double>> xs(b, std::vector<double>(2 * 8 * 16));
  std::vector<TimeMatrix> taus;
  for (auto& x : xs)
    for (double& v : x) v = rng.normal();
  for (std::size_t i = 0; i < b; ++i) {
    TimeMatrix t(8, 16);
    for (std::size_t j = 0; j < t.size(); ++j) t[j] = static_cast<double>(rng.integer(0, 1000));
    taus.push_back(std::move(t));
  }
  return {std::move(xs), std::move(taus)};
}

static void BM_MixerForward(benchmark::State& state) {
  const MixerModel model(bench_config(), 3);
  const auto [xs, taus] = batch(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(xs, taus, nullptr));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_MixerForward)->Arg(1)->Arg(64);

static void BM_MixerForwardBackward(benchmark::State& state) {
  const MixerModel model(bench_config(), 3);
  const auto [xs, taus] = batch(static_cast<std::size_t>(state.range(0)));
  std::vector<double> grad(model.parameter_count());
  for (auto _ : state) {
    ForwardCache cache;
    const auto out = model.forward(xs, taus, &cache);
    model.backward(cache, out, grad);
    benchmark::DoNotOptimize(grad.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_MixerForwardBackward)->Arg(64);

static void BM_GmmDenoiser(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const GmmPrior prior = GmmPrior::reference(d);
  std::vector<double> h(d, 0.3), alpha(d, 0.6), beta(d, 0.8);
  for (auto _ : state) benchmark::DoNotOptimize(gmm_denoiser(h, alpha, beta, prior));
}
BENCHMARK(BM_GmmDenoiser)->Arg(2)->Arg(256);
BENCHMARK_MAIN();
