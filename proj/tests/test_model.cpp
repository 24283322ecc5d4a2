#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unordered_map>

#include "doctest.h"
#include "hc/checkpoint.hpp"
#include "hc/optimizer.hpp"

using namespace hc;

namespace {

constexpr std::uint64_t kSeed = 2468;

template <class S>
void copy_matching_params(Model<S>& src, Model<S>& dst) {
  std::unordered_map<std::string, Tensor<S>> by_name;
  for (auto& [name, p] : src.named_params()) by_name.emplace(name, p);
  for (auto& [name, p] : dst.named_params()) {
    auto it = by_name.find(name);
    if (it != by_name.end())
      std::copy(it->second.value().begin(), it->second.value().end(), p.value().begin());
  }
}

std::vector<std::int32_t> random_ids(std::int64_t count, std::int64_t vocab, Rng& rng) {
  std::vector<std::int32_t> ids(static_cast<std::size_t>(count));
  for (auto& id : ids)
    id = static_cast<std::int32_t>(rng.uniform_index(static_cast<std::uint64_t>(vocab)));
  return ids;
}

template <class S>
double max_abs_diff(std::span<const S> a, std::span<const S> b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

ModelConfig small_config(Variant variant, std::int64_t n) {
  ModelConfig cfg;
  cfg.layers = 2;
  cfg.d_model = 32;
  cfg.heads = 4;
  cfg.d_ffn = 64;
  cfg.vocab = 61;
  cfg.n = n;
  cfg.variant = variant;
  cfg.seed = 11;
  return cfg;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("forward: logits shape is (tokens, vocab) for every variant") {
  Rng rng(kSeed);
  for (Variant v : {Variant::PreNorm, Variant::PostNorm, Variant::Shc, Variant::Dhc}) {
    Model<float> model(small_config(v, 2));
    Tape<float> tape;
    const auto ids = random_ids(1, 61, rng);
    Tensor<float> logits = model.forward(tape, ids, 1, 1);
    CHECK(logits.shape() == Shape{1, 61});
  }
}

TEST_CASE("forward: rejects out-of-vocab ids") {
  Model<float> model(small_config(Variant::PreNorm, 1));
  Tape<float> tape;
  CHECK_THROWS_AS(model.forward(tape, {61}, 1, 1), IndexError);
}

TEST_CASE("forward: causal, a later token cannot move earlier logits") {
  for (Variant v : {Variant::PreNorm, Variant::Dhc}) {
    Model<double> model(small_config(v, 2));
    Rng rng(kSeed + 1);
    const std::int64_t seq = 12;
    auto ids = random_ids(seq, 61, rng);
    Tape<double> t1;
    Tensor<double> a = model.forward(t1, ids, 1, seq);
    ids[7] = (ids[7] + 13) % 61;
    Tape<double> t2;
    Tensor<double> b = model.forward(t2, ids, 1, seq);
    for (std::int64_t pos = 0; pos < 7; ++pos)
      for (std::int64_t c = 0; c < 61; ++c)
        CHECK(a.value()[static_cast<std::size_t>(pos * 61 + c)] ==
              b.value()[static_cast<std::size_t>(pos * 61 + c)]);
    double moved = 0.0;
    for (std::int64_t c = 0; c < 61; ++c)
      moved = std::max(moved, std::abs(a.value()[static_cast<std::size_t>(7 * 61 + c)] -
                                       b.value()[static_cast<std::size_t>(7 * 61 + c)]));
    CHECK(moved > 0.0);
  }
}

TEST_CASE("init equivalence: hyper variants at init match the prenorm baseline") {
  // Same sublayer weights, no sqrt(n) rescale: identical logits after the
  // scale-invariant head norm.
  Rng rng(kSeed + 2);
  const auto ids = random_ids(24, 61, rng);
  Model<double> pre64(small_config(Variant::PreNorm, 1));
  Tape<double> tp;
  Tensor<double> ref = pre64.forward(tp, ids, 1, 24);

  for (Variant v : {Variant::Shc, Variant::Dhc}) {
    for (std::int64_t n : {1, 2, 4}) {
      Model<double> hyper(small_config(v, n));
      copy_matching_params(pre64, hyper);
      Tape<double> th;
      Tensor<double> got = hyper.forward(th, ids, 1, 24);
      CHECK_MESSAGE(max_abs_diff<double>(ref.value(), got.value()) <= 1e-12,
                    variant_name(v), " n=", n);
    }
  }

  Model<float> pre32(small_config(Variant::PreNorm, 1));
  Tape<float> tp32;
  Tensor<float> ref32 = pre32.forward(tp32, ids, 1, 24);
  Model<float> shc32(small_config(Variant::Shc, 4));
  copy_matching_params(pre32, shc32);
  Tape<float> ts32;
  Tensor<float> got32 = shc32.forward(ts32, ids, 1, 24);
  CHECK(max_abs_diff<float>(ref32.value(), got32.value()) <= 1e-6);
}

TEST_CASE("init_weights: n = 1 draws the same stream as the baseline") {
  Model<float> pre(small_config(Variant::PreNorm, 1));
  Model<float> shc(small_config(Variant::Shc, 1));
  std::unordered_map<std::string, Tensor<float>> by_name;
  for (auto& [name, p] : pre.named_params()) by_name.emplace(name, p);
  for (auto& [name, p] : shc.named_params()) {
    auto it = by_name.find(name);
    if (it == by_name.end()) continue;  // hc site params
    CHECK(max_abs_diff<float>(it->second.value(), p.value()) == 0.0);
  }
}

TEST_CASE("init_weights: output projections shrink by sqrt(n)") {
  ModelConfig cfg = small_config(Variant::Shc, 4);
  cfg.d_model = 64;
  cfg.heads = 4;
  cfg.d_ffn = 256;
  Model<float> model(cfg);
  auto sample_std = [](std::span<const float> v) {
    double sum = 0.0, sq = 0.0;
    for (float x : v) {
      sum += x;
      sq += static_cast<double>(x) * x;
    }
    const double mean = sum / static_cast<double>(v.size());
    return std::sqrt(sq / static_cast<double>(v.size()) - mean * mean);
  };
  const double qkv_std = sample_std(model.blocks()[0].w_qkv.value());
  const double out_std = sample_std(model.blocks()[0].w_out.value());
  const double ffn2_std = sample_std(model.blocks()[0].w_ffn2.value());
  CHECK(std::abs(out_std / qkv_std - 0.5) < 0.05);
  CHECK(std::abs(ffn2_std / qkv_std - 0.5) < 0.05);
}

TEST_CASE("init_weights: dynamic projections start at zero") {
  Model<float> model(small_config(Variant::Dhc, 4));
  for (auto& blk : model.blocks())
    for (auto* site : {&blk.hc_attn, &blk.hc_ffn}) {
      for (float v : site->w_alpha.value()) CHECK(v == 0.0f);
      for (float v : site->w_beta.value()) CHECK(v == 0.0f);
      CHECK(site->s_alpha.value()[0] == 0.01f);
      CHECK(site->s_beta.value()[0] == 0.01f);
    }
}

TEST_CASE("loss: untrained model sits near the uniform bound") {
  ModelConfig cfg = small_config(Variant::Dhc, 2);
  cfg.vocab = 256;
  cfg.d_model = 64;
  cfg.d_ffn = 128;
  Model<float> model(cfg);
  Rng rng(kSeed + 3);
  const auto ids = random_ids(2 * 33, 256, rng);
  Tape<float> tape;
  const double loss = model.loss(tape, ids, 2, 33).item();
  CHECK(std::abs(loss - std::log(256.0)) < 0.1);
}

TEST_CASE("loss: requires at least two positions") {
  Model<float> model(small_config(Variant::PreNorm, 1));
  Tape<float> tape;
  CHECK_THROWS_AS(model.loss(tape, {3}, 1, 1), ConfigError);
}

TEST_CASE("training memorizes a single repeated sequence") {
  ModelConfig cfg;
  cfg.layers = 2;
  cfg.d_model = 64;
  cfg.heads = 4;
  cfg.d_ffn = 256;
  cfg.vocab = 256;
  cfg.n = 2;
  cfg.variant = Variant::Dhc;
  cfg.seed = 5;
  Model<float> model(cfg);

  const std::string text = "the quick brown fox jumps over the lazy dog; pack my box";
  std::vector<std::int32_t> ids;
  for (char ch : text) ids.push_back(static_cast<std::int32_t>(static_cast<unsigned char>(ch)));
  const auto seq = static_cast<std::int64_t>(ids.size());

  typename AdamW<float>::Options opts;
  opts.weight_decay = 0.0;
  AdamW<float> opt(model.named_params(), opts);
  std::vector<double> losses;
  for (int step = 0; step < 500; ++step) {
    opt.zero_grad();
    Tape<float> tape;
    Tensor<float> loss = model.loss(tape, ids, 1, seq);
    losses.push_back(loss.item());
    tape.backward(loss);
    opt.clip_global_norm(1.0);
    opt.step(3e-3);
  }
  auto window_mean = [&](std::size_t lo, std::size_t hi) {
    double acc = 0.0;
    for (std::size_t i = lo; i < hi; ++i) acc += losses[i];
    return acc / static_cast<double>(hi - lo);
  };
  // Smoothed monotone descent: quarter-window means keep decreasing until
  // the run converges to the float noise floor.
  const double q1 = window_mean(0, 125);
  const double q2 = window_mean(125, 250);
  const double q3 = window_mean(250, 375);
  const double q4 = window_mean(375, 500);
  const double converged = 0.01;
  CHECK(q2 < q1);
  CHECK((q3 < q2 || q3 < converged));
  CHECK((q4 < q3 || q4 < converged));
  CHECK_MESSAGE(losses.back() < 0.1, "final loss ", losses.back());
}

TEST_CASE("checkpoint: bit-exact round trip and restored forwards") {
  ModelConfig cfg = small_config(Variant::Dhc, 2);
  Model<double> model(cfg);
  Rng rng(kSeed + 4);
  for (auto& [name, p] : model.named_params())
    for (auto& v : p.value()) v += rng.normal(0.0, 0.01);

  Checkpoint<double> ckpt;
  ckpt.config = cfg;
  ckpt.step = 41;
  ckpt.rng = rng.state();
  for (auto& [name, t] : model.named_params()) ckpt.tensors.emplace_back(name, t);

  const std::string p1 = temp_path("hc_test_ckpt1.bin");
  const std::string p2 = temp_path("hc_test_ckpt2.bin");
  save_checkpoint(p1, ckpt);
  Checkpoint<double> loaded = load_checkpoint_file<double>(p1);
  CHECK(loaded.step == 41);
  CHECK(loaded.config == cfg);
  save_checkpoint(p2, loaded);

  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);

  auto restored = restore_model(loaded);
  const auto ids = random_ids(10, 61, rng);
  Tape<double> ta, tb;
  Tensor<double> la = model.forward(ta, ids, 1, 10);
  Tensor<double> lb = restored.model.forward(tb, ids, 1, 10);
  CHECK(max_abs_diff<double>(la.value(), lb.value()) == 0.0);
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("checkpoint: corrupt and mismatched files fail loudly") {
  const std::string path = temp_path("hc_test_ckpt_bad.bin");
  {
    std::ofstream os(path, std::ios::binary);
    os << "this is not a checkpoint";
  }
  CHECK_THROWS_AS(load_checkpoint_file<double>(path), IoError);
  std::remove(path.c_str());

  // A config that promises shapes the records do not have.
  ModelConfig cfg = small_config(Variant::Shc, 2);
  Model<double> model(cfg);
  Checkpoint<double> ckpt;
  ckpt.config = cfg;
  ckpt.config.d_model = 16;  // wrong on purpose
  for (auto& [name, t] : model.named_params()) ckpt.tensors.emplace_back(name, t);
  CHECK_THROWS_AS(restore_model(ckpt), ConfigError);
}

TEST_CASE("checkpoint: optimizer state round-trips, next step identical") {
  ModelConfig cfg = small_config(Variant::Dhc, 2);
  Model<float> model(cfg);
  typename AdamW<float>::Options opts;
  opts.weight_decay = 0.1;
  AdamW<float> opt(model.named_params(), opts);

  Rng rng(kSeed + 5);
  const auto ids = random_ids(3 * 16, 61, rng);
  auto one_step = [&](Model<float>& m, AdamW<float>& o) {
    o.zero_grad();
    Tape<float> tape;
    Tensor<float> loss = m.loss(tape, ids, 3, 16);
    tape.backward(loss);
    o.clip_global_norm(1.0);
    o.step(1e-3);
  };
  one_step(model, opt);  // give the moments non-trivial values

  Checkpoint<float> ckpt;
  ckpt.config = cfg;
  ckpt.step = 1;
  for (auto& [name, t] : model.named_params()) ckpt.tensors.emplace_back(name, t);
  for (auto& [name, t] : opt.named_state()) ckpt.tensors.emplace_back(name, t);
  const std::string path = temp_path("hc_test_ckpt_opt.bin");
  save_checkpoint(path, ckpt);

  auto restored = restore_model(load_checkpoint_file<float>(path));
  AdamW<float> opt2(restored.model.named_params(), opts);
  opt2.load_state(restored.extra);
  CHECK(opt2.t() == opt.t());

  one_step(model, opt);
  one_step(restored.model, opt2);
  auto pa = model.named_params();
  auto pb = restored.model.named_params();
  for (std::size_t i = 0; i < pa.size(); ++i)
    CHECK(max_abs_diff<float>(pa[i].second.value(), pb[i].second.value()) == 0.0);
  std::remove(path.c_str());
}

TEST_CASE("forward is deterministic for a fixed model and input") {
  Model<float> model(small_config(Variant::Dhc, 4));
  Rng rng(kSeed + 6);
  const auto ids = random_ids(2 * 20, 61, rng);
  Tape<float> t1, t2;
  Tensor<float> a = model.forward(t1, ids, 2, 20);
  Tensor<float> b = model.forward(t2, ids, 2, 20);
  CHECK(max_abs_diff<float>(a.value(), b.value()) == 0.0);
}
