#include <benchmark/benchmark.h>

#include <random>

#include "ugg/dataio.hpp"
#include "ugg/evalkit.hpp"
#include "ugg/numerics/matrix.hpp"
#include "ugg/numerics/rng.hpp"
#include "ugg/objective.hpp"

namespace {

using namespace ugg;

dataio::SyntheticSpec spec(std::size_t n) {
  dataio::SyntheticSpec s;
  s.local_tokens = n;
  return s;
}

void BM_Matmul(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  RngStream rng(1, 0);
  const Matrix a = rng.normal_matrix(d, d), b = rng.normal_matrix(d, d);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(d * d * d));
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(129);

void BM_Generate(benchmark::State& state) {
  const dataio::SyntheticSpec s = spec(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(dataio::generate(s));
}
BENCHMARK(BM_Generate)->Arg(16)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_FeatureCodec(benchmark::State& state) {
  const dataio::Dataset ds = dataio::generate(spec(static_cast<std::size_t>(state.range(0))));
  std::size_t bytes = 0;
  for (auto _ : state) {
    const std::string enc = dataio::encode_features(ds);
    bytes = enc.size();
    benchmark::DoNotOptimize(dataio::decode_features(enc));
  }
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(bytes));
}
BENCHMARK(BM_FeatureCodec)->Arg(16)->Arg(128)->Unit(benchmark::kMillisecond);

// One training epoch (about 8 Adam steps of a 4 x 4 batch) on the standard benchmark.
void BM_TrainEpoch(benchmark::State& state) {
  const dataio::Dataset ds = dataio::generate(spec(static_cast<std::size_t>(state.range(1))));
  objective::TrainConfig cfg;
  cfg.variant = objective::kVariants[static_cast<std::size_t>(state.range(0))];
  cfg.epochs = 1;
  for (auto _ : state) benchmark::DoNotOptimize(objective::fit(cfg, ds));
  state.SetLabel(std::string("variant ") + objective::variant_letter(cfg.variant));
}
BENCHMARK(BM_TrainEpoch)
    ->ArgsProduct({{0, 1, 2, 3, 4}, {16}})
    ->Args({4, 128})
    ->Unit(benchmark::kMillisecond);

void BM_EmbedAndEvaluate(benchmark::State& state) {
  const dataio::Dataset ds = dataio::generate(spec(16));
  objective::TrainConfig cfg;
  cfg.variant = objective::kVariants[static_cast<std::size_t>(state.range(0))];
  const objective::Model model = objective::init_model(cfg, ds.dim, ds.num_labels());
  for (auto _ : state) benchmark::DoNotOptimize(evalkit::evaluate_model(model, ds));
  state.SetLabel(std::string("variant ") + objective::variant_letter(cfg.variant));
}
BENCHMARK(BM_EmbedAndEvaluate)->DenseRange(0, 4)->Unit(benchmark::kMillisecond);

void BM_Evaluate(benchmark::State& state) {
  const auto q = static_cast<std::size_t>(state.range(0)), g = static_cast<std::size_t>(state.range(1));
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  evalkit::RetrievalResult r;
  r.distances = Matrix(q, g);
  for (double& d : r.distances.values()) d = u(gen);
  for (std::size_t i = 0; i < q; ++i) r.query_labels.push_back(static_cast<std::uint32_t>(i % 50));
  for (std::size_t j = 0; j < g; ++j) r.gallery_labels.push_back(static_cast<std::uint32_t>(j % 50));
  for (auto _ : state) benchmark::DoNotOptimize(evalkit::evaluate(r));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(q * g));
}
BENCHMARK(BM_Evaluate)->Args({40, 40})->Args({200, 1000})->Args({1000, 5000})->Unit(benchmark::kMillisecond);

void BM_Gradcheck(benchmark::State& state) {
  const dataio::Dataset batch = objective::gradcheck_batch(8, 4, 4, 2, 0);
  objective::TrainConfig cfg;
  cfg.variant = objective::kVariants[static_cast<std::size_t>(state.range(0))];
  for (auto _ : state) benchmark::DoNotOptimize(objective::gradcheck_model(cfg, batch));
  state.SetLabel(std::string("variant ") + objective::variant_letter(cfg.variant));
}
BENCHMARK(BM_Gradcheck)->Arg(0)->Arg(4)->Unit(benchmark::kMillisecond)->Iterations(1);

}  // namespace

BENCHMARK_MAIN();
