#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "hc/synth_corpus.hpp"
#include "hc/trainer.hpp"
#include "hc/verify.hpp"
#include "json.hpp"

using namespace hc;

namespace {

constexpr std::uint64_t kSeed = 555;

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::create_directories(dir);
  return dir;
}

RunConfig tiny_run(const std::filesystem::path& dir, Variant variant) {
  RunConfig cfg;
  cfg.model.layers = 2;
  cfg.model.d_model = 32;
  cfg.model.heads = 4;
  cfg.model.d_ffn = 64;
  cfg.model.vocab = 256;
  cfg.model.n = 2;
  cfg.model.variant = variant;
  cfg.model.seed = 21;
  cfg.steps = 30;
  cfg.batch_size = 4;
  cfg.seq_len = 32;
  cfg.lr = 2e-3;
  cfg.warmup_steps = 5;
  cfg.eval_interval = 10;
  cfg.train_corpus = (dir / "train.txt").string();
  cfg.val_corpus = (dir / "val.txt").string();
  cfg.out_dir = (dir / "run").string();
  cfg.seed = 31;
  return cfg;
}

void write_corpora(const std::filesystem::path& dir) {
  write_synth_corpus((dir / "train.txt").string(), 96 * 1024, 1);
  write_synth_corpus((dir / "val.txt").string(), 16 * 1024, 2);
}

}  // namespace

TEST_CASE("ingest: byte tokenization and window chunking") {
  const std::vector<std::uint8_t> abc = {'a', 'b', 'c'};
  CHECK(tokenize_bytes(abc) == std::vector<std::int32_t>{97, 98, 99});

  // Corpus shorter than seq_len + 1 cannot produce a window.
  CHECK_THROWS_AS(TokenDataset(abc, 3), IoError);

  const std::vector<std::uint8_t> bytes = {0, 1, 2, 3, 4, 5, 6, 7, 8};
  TokenDataset ds(bytes, 4);
  CHECK(ds.num_windows() == 2);
  std::vector<std::int32_t> w(5);
  ds.fill_window(1, w);
  CHECK(w == std::vector<std::int32_t>{4, 5, 6, 7, 8});
}

TEST_CASE("ingest: unreadable or empty corpus is an error") {
  CHECK_THROWS_AS(read_corpus_bytes("/nonexistent/corpus.txt"), IoError);
  const auto p = std::filesystem::temp_directory_path() / "hc_empty_corpus.txt";
  std::ofstream(p.string()).close();
  CHECK_THROWS_AS(read_corpus_bytes(p.string()), IoError);
  std::filesystem::remove(p);
}

TEST_CASE("sampler: fixed seed fixes the batch order") {
  BatchSampler a(100, 7), b(100, 7), c(100, 8);
  std::vector<std::int64_t> seq_a, seq_b, seq_c;
  for (int i = 0; i < 250; ++i) {  // crosses an epoch boundary
    seq_a.push_back(a.next());
    seq_b.push_back(b.next());
    seq_c.push_back(c.next());
  }
  CHECK(seq_a == seq_b);
  CHECK(seq_a != seq_c);
}

TEST_CASE("synth corpus is deterministic and textual") {
  const std::string a = synth_corpus(4096, 42);
  const std::string b = synth_corpus(4096, 42);
  const std::string c = synth_corpus(4096, 43);
  CHECK(a == b);
  CHECK(a != c);
  CHECK(a.size() >= 4096);
  std::size_t spaces = 0;
  for (char ch : a)
    if (ch == ' ') ++spaces;
  CHECK(spaces > a.size() / 20);
}

TEST_CASE("lr schedule: warmup then cosine to the final fraction") {
  const double lr = 1e-3;
  CHECK(lr_at_step(0, 100, 10, lr, 0.1) == doctest::Approx(lr / 10.0));
  CHECK(lr_at_step(9, 100, 10, lr, 0.1) == doctest::Approx(lr));
  CHECK(lr_at_step(10, 100, 10, lr, 0.1) == doctest::Approx(lr));
  CHECK(lr_at_step(99, 100, 10, lr, 0.1) > lr * 0.1);
  CHECK(lr_at_step(99, 100, 10, lr, 0.1) < lr * 0.12);
}

TEST_CASE("perplexity: loss 0 maps to 1") {
  CHECK(perplexity_from_loss(0.0) == 1.0);
  CHECK(perplexity_from_loss(std::log(14.0)) == doctest::Approx(14.0));
}

TEST_CASE("metrics: records serialize with round-trip precision") {
  MetricsRecord rec;
  rec.step = 12;
  rec.train_loss = 1.2345678901234567;
  rec.val_loss = 0.5;
  rec.lr = 1e-3;
  rec.grad_norm = 0.25;
  rec.tokens_seen = 4096;
  rec.wallclock_s = 1.5;
  const std::string line = metrics_record_json(rec);
  const auto j = nlohmann::json::parse(line);
  CHECK(j.at("step") == 12);
  CHECK(j.at("train_loss").get<double>() == rec.train_loss);
  CHECK(j.at("val_loss").get<double>() == 0.5);
  const std::string no_clock = metrics_record_json(rec, false);
  CHECK(no_clock.find("wallclock") == std::string::npos);
}

TEST_CASE("run config: validation catches bad settings") {
  const auto dir = temp_dir("hc_cfg_test");
  write_corpora(dir);
  RunConfig cfg = tiny_run(dir, Variant::PreNorm);
  cfg.validate();

  RunConfig bad = cfg;
  bad.warmup_steps = bad.steps;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.seq_len = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.model.n = 0;
  bad.model.variant = Variant::Dhc;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  // JSON round trip preserves the settings.
  const RunConfig parsed = run_config_from_json(run_config_to_json(cfg));
  CHECK(parsed.model == cfg.model);
  CHECK(parsed.steps == cfg.steps);
  CHECK(parsed.lr == cfg.lr);
  std::filesystem::remove_all(dir);
}

TEST_CASE("optimizer groups: every parameter lands in exactly one group") {
  ModelConfig cfg;
  cfg.layers = 2;
  cfg.d_model = 16;
  cfg.heads = 2;
  cfg.d_ffn = 32;
  cfg.vocab = 31;
  cfg.n = 2;
  cfg.variant = Variant::Dhc;
  cfg.dhc_norm = HcNormKind::Layer;
  Model<float> model(cfg);
  AdamW<float> opt(model.named_params(), {});
  std::string detail;
  CHECK_MESSAGE(audit_param_groups(opt, &detail), detail);

  std::size_t statics = 0, dynamics = 0, regular = 0;
  for (const auto& e : opt.entries()) {
    switch (e.group) {
      case ParamGroup::HcStatic: ++statics; break;
      case ParamGroup::HcDynamic: ++dynamics; break;
      case ParamGroup::Regular: ++regular; break;
    }
    const bool is_static_name = e.name.find(".static_") != std::string::npos;
    CHECK(is_static_name == (e.group == ParamGroup::HcStatic));
  }
  CHECK(statics == 8);    // 4 sites x {beta, alpha}
  CHECK(dynamics == 20);  // 4 sites x {w_alpha, w_beta, s_alpha, s_beta, norm_gain}
  CHECK(regular == 9);    // embed + 2 blocks x 4 mats
}

TEST_CASE("weight decay: applied to regular and dynamic groups only") {
  ModelConfig cfg;
  cfg.layers = 1;
  cfg.d_model = 16;
  cfg.heads = 2;
  cfg.d_ffn = 32;
  cfg.vocab = 31;
  cfg.n = 2;
  cfg.variant = Variant::Dhc;
  Model<float> model(cfg);
  typename AdamW<float>::Options opts;
  opts.weight_decay = 0.5;
  AdamW<float> opt(model.named_params(), opts);
  // With zero gradients the only update is the decoupled decay term.
  opt.zero_grad();
  const float beta_before = model.blocks()[0].hc_attn.static_beta.value()[0];
  const float qkv_before = model.blocks()[0].w_qkv.value()[0];
  const float gate_before = model.blocks()[0].hc_attn.s_alpha.value()[0];
  opt.step(1e-2);
  CHECK(model.blocks()[0].hc_attn.static_beta.value()[0] == beta_before);
  CHECK(model.blocks()[0].w_qkv.value()[0] ==
        doctest::Approx(qkv_before * (1.0f - 0.5e-2f)).epsilon(1e-6));
  CHECK(model.blocks()[0].hc_attn.s_alpha.value()[0] ==
        doctest::Approx(gate_before * (1.0f - 0.5e-2f)).epsilon(1e-6));
}

TEST_CASE("train smoke run: loss falls, metrics stream is well-formed") {
  const auto dir = temp_dir("hc_train_smoke");
  write_corpora(dir);
  RunConfig cfg = tiny_run(dir, Variant::Dhc);
  const auto out = train_run<float>(cfg);

  REQUIRE(out.metrics.size() == 30);
  CHECK(out.metrics.front().train_loss > out.metrics.back().train_loss);
  for (std::size_t i = 1; i < out.metrics.size(); ++i) {
    CHECK(out.metrics[i].step == out.metrics[i - 1].step + 1);
    CHECK(out.metrics[i].tokens_seen > out.metrics[i - 1].tokens_seen);
  }
  CHECK(std::isfinite(out.final_val_loss));

  // metrics.jsonl parses line by line at any truncation point.
  std::ifstream is(cfg.out_dir + "/metrics.jsonl");
  REQUIRE(is.good());
  std::string line;
  std::size_t lines = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    bool well_formed = true;
    try {
      well_formed = nlohmann::json::parse(line).contains("step");
    } catch (const nlohmann::json::exception&) {
      well_formed = false;
    }
    CHECK(well_formed);
    ++lines;
  }
  CHECK(lines == 30);

  // The final checkpoint restores and evaluates deterministically.
  auto restored = restore_model(load_checkpoint_file<float>(out.checkpoint_path));
  const auto val = read_corpus_bytes(cfg.val_corpus);
  const auto e1 = evaluate_model(restored.model, val, cfg.seq_len, cfg.batch_size);
  const auto e2 = evaluate_model(restored.model, val, cfg.seq_len, cfg.batch_size);
  CHECK(e1.loss == e2.loss);
  CHECK(e1.perplexity == doctest::Approx(std::exp(e1.loss)));

  // After training, the model fits the training text at least as well as
  // the held-out text.
  const auto train_bytes = read_corpus_bytes(cfg.train_corpus);
  const auto et = evaluate_model(restored.model, train_bytes, cfg.seq_len, cfg.batch_size, 8);
  CHECK(et.loss <= e1.loss + 0.05);
  std::filesystem::remove_all(dir);
}

TEST_CASE("reproducibility: identical run configs produce identical streams") {
  const auto dir = temp_dir("hc_train_repro");
  write_corpora(dir);
  RunConfig cfg = tiny_run(dir, Variant::Shc);
  cfg.steps = 12;
  cfg.out_dir = (dir / "run_a").string();
  const auto a = train_run<float>(cfg);
  cfg.out_dir = (dir / "run_b").string();
  const auto b = train_run<float>(cfg);
  REQUIRE(a.metrics.size() == b.metrics.size());
  for (std::size_t i = 0; i < a.metrics.size(); ++i)
    CHECK(metrics_record_json(a.metrics[i], false) == metrics_record_json(b.metrics[i], false));
  std::filesystem::remove_all(dir);
}

TEST_CASE("divergence: non-finite loss aborts with a diagnostic record") {
  const auto dir = temp_dir("hc_train_diverge");
  write_corpora(dir);
  RunConfig cfg = tiny_run(dir, Variant::PreNorm);
  cfg.lr = 1e8;  // guaranteed blow-up
  cfg.warmup_steps = 0;
  cfg.grad_clip = 0.0;
  cfg.steps = 50;
  CHECK_THROWS_AS(train_run<float>(cfg), EvalError);
  std::ifstream is(cfg.out_dir + "/metrics.jsonl");
  REQUIRE(is.good());
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  CHECK(text.find("\"event\":\"divergence\"") != std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST_CASE("verify suites: green on a clean build, red with the injected fault") {
  const auto clean = verify::run_suites("all", false);
  CHECK(verify::all_pass(clean));
  const auto faulted = verify::run_suites("all", true);
  CHECK_FALSE(verify::all_pass(faulted));
  // Each failing check is a named negative control.
  for (const auto& suite : faulted)
    for (const auto& check : suite.checks)
      if (!check.pass) CHECK(check.name.find("negative control") != std::string::npos);
  CHECK_THROWS_AS(verify::run_suites("nonsense", false), ConfigError);
}
