#include <benchmark/benchmark.h>

#include "hc/hyperconn.hpp"
#include "hc/analysis.hpp"
#include "hc/trainer.hpp"

namespace {

void BM_Matmul(benchmark::State& state) {
  const std::int64_t n = state.range(0);
  hc::Rng rng(1);
  auto a = hc::Tensor<float>::randn({n, n}, rng);
  auto b = hc::Tensor<float>::randn({n, n}, rng);
  for (auto _ : state) {
    hc::Tape<float> tape;
    auto c = hc::ops::matmul(tape, a, b);
    benchmark::DoNotOptimize(c.value().data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256)->Arg(512);

void BM_WidthConnection(benchmark::State& state) {
  const std::int64_t n = state.range(0);
  const std::int64_t tokens = 1024, d = 64;
  hc::Rng rng(2);
  auto site = hc::HcSite<float>::dynamic_init(0, n, d, true, hc::HcNormKind::Rms);
  for (auto& v : site.w_alpha.value()) v = static_cast<float>(rng.normal(0.0, 0.1));
  auto h = hc::Tensor<float>::randn({tokens, n, d}, rng);
  for (auto _ : state) {
    hc::Tape<float> tape;
    auto wr = hc::width_connection(tape, site, h);
    benchmark::DoNotOptimize(wr.layer_input.value().data());
  }
  state.SetItemsProcessed(state.iterations() * tokens);
}
BENCHMARK(BM_WidthConnection)->Arg(1)->Arg(2)->Arg(4)->Arg(8);

void BM_ModelStep(benchmark::State& state) {
  hc::tune_allocator();
  hc::ModelConfig cfg;
  cfg.layers = 2;
  cfg.d_model = 64;
  cfg.heads = 4;
  cfg.d_ffn = 256;
  cfg.vocab = 256;
  cfg.n = state.range(0);
  cfg.variant = cfg.n == 0 ? hc::Variant::PreNorm : hc::Variant::Dhc;
  if (cfg.n == 0) cfg.n = 1;
  cfg.seed = 3;
  hc::Model<float> model(cfg);
  hc::Rng rng(4);
  std::vector<std::int32_t> ids(8 * 129);
  for (auto& id : ids) id = static_cast<std::int32_t>(rng.uniform_index(256));
  for (auto _ : state) {
    hc::Tape<float> tape;
    auto loss = model.loss(tape, ids, 8, 129);
    tape.backward(loss);
    benchmark::DoNotOptimize(loss.item());
    for (auto& [name, p] : model.named_params()) p.zero_grad();
  }
  state.SetItemsProcessed(state.iterations() * 8 * 129);
}
BENCHMARK(BM_ModelStep)->Arg(0)->Arg(2)->Arg(4);

void BM_Unfold(benchmark::State& state) {
  const std::int64_t n = 4, sites = 32;
  hc::Rng rng(5);
  std::vector<hc::SiteWeights> stack;
  for (std::int64_t k = 0; k < sites; ++k) {
    hc::SiteWeights w;
    w.beta.resize(n);
    w.alpha_m.resize(n);
    w.alpha_r = hc::DMat(n, n);
    for (auto& v : w.beta) v = rng.normal();
    for (auto& v : w.alpha_m) v = rng.normal();
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < n; ++j) w.alpha_r(i, j) = rng.normal();
    stack.push_back(std::move(w));
  }
  for (auto _ : state) {
    auto unfolded = hc::analysis::unfold(stack, n);
    benchmark::DoNotOptimize(unfolded.c0.data().data());
  }
}
BENCHMARK(BM_Unfold);

}  // namespace

BENCHMARK_MAIN();
