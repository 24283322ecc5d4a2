// Command-line front end: train / eval / analyze / verify plus a synthetic
// corpus generator. Exit codes: 0 success, 1 failure, 2 configuration error.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "hc/analysis.hpp"
#include "hc/synth_corpus.hpp"
#include "hc/trainer.hpp"
#include "hc/verify.hpp"

namespace fs = std::filesystem;

namespace {

struct TrainArgs {
  std::string config_path;
  std::string out_dir_override;
};

struct EvalArgs {
  std::string ckpt;
  std::string corpus;
  std::int64_t seq_len = 128;
  std::int64_t batch = 8;
};

struct AnalyzeArgs {
  std::string mode;
  std::string ckpt;
  std::string config_path;
  std::string corpus;
  std::string out_dir = "analysis";
  std::int64_t seq_len = 128;
  std::int64_t max_windows = 8;
  std::int64_t batch = 8;
};

struct VerifyArgs {
  std::string suite = "all";
  bool inject_fault = false;
};

struct CorpusArgs {
  std::string out;
  std::uint64_t bytes = 1 << 20;
  std::uint64_t seed = 0;
};

int run_train(const TrainArgs& args) {
  hc::RunConfig cfg = hc::run_config_from_file(args.config_path);
  if (!args.out_dir_override.empty()) cfg.out_dir = args.out_dir_override;
  cfg.validate();
  if (cfg.precision == "f64") {
    const auto out = hc::train_run<double>(cfg);
    std::cout << "final val_loss " << out.final_val_loss << ", checkpoint "
              << out.checkpoint_path << "\n";
  } else {
    const auto out = hc::train_run<float>(cfg);
    std::cout << "final val_loss " << out.final_val_loss << ", checkpoint "
              << out.checkpoint_path << "\n";
  }
  return 0;
}

template <class S>
int eval_with(const EvalArgs& args) {
  auto restored = hc::restore_model(hc::load_checkpoint_file<S>(args.ckpt));
  const auto corpus = hc::read_corpus_bytes(args.corpus);
  const auto result = hc::evaluate_model(restored.model, corpus, args.seq_len, args.batch);
  std::cout << "{\"loss\":" << result.loss << ",\"perplexity\":" << result.perplexity
            << ",\"windows\":" << result.windows << "}\n";
  return 0;
}

int run_eval(const EvalArgs& args) {
  return hc::checkpoint_dtype(args.ckpt) == 0 ? eval_with<float>(args) : eval_with<double>(args);
}

// Loads enough validation windows to drive the token-conditioned analyses.
std::vector<std::int32_t> analysis_batch(const AnalyzeArgs& args, std::int64_t& batch,
                                         std::int64_t& seq) {
  if (args.corpus.empty())
    throw hc::ConfigError("analyze: this mode needs --corpus for a token batch");
  const auto bytes = hc::read_corpus_bytes(args.corpus);
  hc::TokenDataset ds(bytes, args.seq_len);
  batch = std::min<std::int64_t>(args.max_windows, ds.num_windows());
  seq = ds.window_len();
  std::vector<std::int32_t> ids(static_cast<std::size_t>(batch * seq));
  for (std::int64_t b = 0; b < batch; ++b)
    ds.fill_window(b, std::span<std::int32_t>(ids.data() + b * seq,
                                              static_cast<std::size_t>(seq)));
  return ids;
}

template <class S>
int analyze_with(const AnalyzeArgs& args) {
  auto restored = hc::restore_model(hc::load_checkpoint_file<S>(args.ckpt));
  hc::Model<S>& model = restored.model;
  const hc::ModelConfig& cfg = model.config();
  fs::create_directories(args.out_dir);

  if (args.mode == "unfold") {
    std::vector<hc::SiteWeights> sites;
    if (cfg.variant == hc::Variant::Shc) {
      sites = hc::analysis::shc_site_weights(model);
    } else if (cfg.variant == hc::Variant::Dhc) {
      std::int64_t batch = 0, seq = 0;
      const auto ids = analysis_batch(args, batch, seq);
      sites = hc::analysis::dhc_effective_weights(model, ids, batch, seq);
    } else {
      throw hc::ConfigError("analyze unfold: model variant '" + hc::variant_name(cfg.variant) +
                            "' has no hyper-connection sites");
    }
    const auto unfolded = hc::analysis::unfold(sites, cfg.n);
    for (const auto& path : hc::analysis::export_connections_csv(unfolded, args.out_dir))
      std::cout << path << "\n";
  } else if (args.mode == "cosine") {
    std::int64_t batch = 0, seq = 0;
    const auto ids = analysis_batch(args, batch, seq);
    const auto profile = hc::analysis::cosine_profile(model, ids, batch, seq);
    const std::string path = (fs::path(args.out_dir) / "cosine.json").string();
    std::ofstream os(path, std::ios::trunc);
    os << hc::analysis::similarity_to_json(profile) << "\n";
    std::cout << path << "\n";
  } else {
    throw hc::ConfigError("analyze: unknown mode '" + args.mode + "'");
  }
  return 0;
}

int run_analyze(const AnalyzeArgs& args) {
  if (args.mode == "cost") {
    hc::ModelConfig cfg;
    if (!args.config_path.empty()) {
      std::ifstream is(args.config_path);
      if (!is) throw hc::ConfigError("analyze cost: cannot open '" + args.config_path + "'");
      std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
      cfg = hc::model_config_from_json(text);
    } else if (!args.ckpt.empty()) {
      cfg = hc::checkpoint_config(args.ckpt);
    } else {
      throw hc::ConfigError("analyze cost: need --ckpt or --config");
    }
    const auto report = hc::analysis::cost_report(cfg);
    const auto mem = hc::analysis::estimate_activation_memory(cfg, args.batch, args.seq_len);
    fs::create_directories(args.out_dir);
    const std::string path = (fs::path(args.out_dir) / "cost.json").string();
    std::ofstream os(path, std::ios::trunc);
    os << hc::analysis::cost_to_json(report) << "\n"
       << hc::analysis::activation_memory_to_json(mem) << "\n";
    std::cout << "P_extra " << report.hc_params << " (" << report.hc_params_per_site
              << " per site), total " << report.total_params << ", hc flops/token "
              << report.hc_flops_per_token << " (+"
              << report.flops_delta_rate * 100.0 << "%)\n"
              << path << "\n";
    return 0;
  }
  if (args.ckpt.empty()) throw hc::ConfigError("analyze: --ckpt is required");
  return hc::checkpoint_dtype(args.ckpt) == 0 ? analyze_with<float>(args)
                                              : analyze_with<double>(args);
}

int run_verify(const VerifyArgs& args) {
  const auto reports = hc::verify::run_suites(args.suite, args.inject_fault);
  std::cout << hc::verify::reports_to_json(reports) << "\n";
  return hc::verify::all_pass(reports) ? 0 : 1;
}

int run_make_corpus(const CorpusArgs& args) {
  hc::write_synth_corpus(args.out, args.bytes, args.seed);
  std::cout << args.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hyper-connections desk-scale trainer and verifier"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train a model from a run-config JSON file");
  train_cmd->add_option("--config", train_args.config_path, "run config JSON")->required();
  train_cmd->add_option("--out-dir", train_args.out_dir_override, "override out_dir");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a corpus");
  eval_cmd->add_option("--ckpt", eval_args.ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--corpus", eval_args.corpus, "text corpus")->required();
  eval_cmd->add_option("--seq-len", eval_args.seq_len, "window length");
  eval_cmd->add_option("--batch", eval_args.batch, "windows per batch");

  AnalyzeArgs analyze_args;
  auto* analyze_cmd = app.add_subcommand("analyze", "export unfold / cosine / cost artifacts");
  analyze_cmd->add_option("mode", analyze_args.mode, "unfold | cosine | cost")->required();
  analyze_cmd->add_option("--ckpt", analyze_args.ckpt, "checkpoint file");
  analyze_cmd->add_option("--config", analyze_args.config_path,
                          "model config JSON (cost mode only)");
  analyze_cmd->add_option("--corpus", analyze_args.corpus, "token source for dhc analyses");
  analyze_cmd->add_option("--out-dir", analyze_args.out_dir, "export directory");
  analyze_cmd->add_option("--seq-len", analyze_args.seq_len, "window length");
  analyze_cmd->add_option("--max-windows", analyze_args.max_windows, "windows to forward");
  analyze_cmd->add_option("--batch", analyze_args.batch, "batch size for the memory estimate");

  VerifyArgs verify_args;
  auto* verify_cmd = app.add_subcommand("verify", "run the property suites");
  verify_cmd->add_option("suite", verify_args.suite,
                         "algebra | gradients | unfolding | accounting | all");
  verify_cmd->add_flag("--inject-fault", verify_args.inject_fault,
                       "perturb one fixture per suite (negative control)");

  CorpusArgs corpus_args;
  auto* corpus_cmd = app.add_subcommand("make-corpus", "write a deterministic synthetic corpus");
  corpus_cmd->add_option("--out", corpus_args.out, "output path")->required();
  corpus_cmd->add_option("--bytes", corpus_args.bytes, "approximate size");
  corpus_cmd->add_option("--seed", corpus_args.seed, "generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train_cmd) return run_train(train_args);
    if (*eval_cmd) return run_eval(eval_args);
    if (*analyze_cmd) return run_analyze(analyze_args);
    if (*verify_cmd) return run_verify(verify_args);
    if (*corpus_cmd) return run_make_corpus(corpus_args);
  } catch (const hc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
