#include "hc/trainer.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace hc {

void tune_allocator() {
#if defined(__GLIBC__)
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)once;
#endif
}

void RunConfig::validate() const {
  model.validate();
  if (steps < 1) throw ConfigError("run: steps must be >= 1");
  if (batch_size < 1) throw ConfigError("run: batch_size must be >= 1");
  if (seq_len < 2) throw ConfigError("run: seq_len must be >= 2");
  if (warmup_steps < 0 || warmup_steps >= steps)
    throw ConfigError("run: warmup_steps must be < steps");
  if (lr <= 0.0) throw ConfigError("run: lr must be positive");
  if (lr_final_frac < 0.0 || lr_final_frac > 1.0)
    throw ConfigError("run: lr_final_frac must be in [0, 1]");
  if (weight_decay < 0.0) throw ConfigError("run: weight_decay must be >= 0");
  if (eval_interval < 0) throw ConfigError("run: eval_interval must be >= 0");
  if (precision != "f32" && precision != "f64")
    throw ConfigError("run: precision must be 'f32' or 'f64'");
  if (train_corpus.empty()) throw ConfigError("run: train_corpus is required");
  if (val_corpus.empty()) throw ConfigError("run: val_corpus is required");
}

std::string run_config_to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["model"] = nlohmann::json::parse(model_config_to_json(cfg.model));
  j["steps"] = cfg.steps;
  j["batch_size"] = cfg.batch_size;
  j["seq_len"] = cfg.seq_len;
  j["lr"] = cfg.lr;
  j["warmup_steps"] = cfg.warmup_steps;
  j["lr_final_frac"] = cfg.lr_final_frac;
  j["weight_decay"] = cfg.weight_decay;
  j["grad_clip"] = cfg.grad_clip;
  j["eval_interval"] = cfg.eval_interval;
  j["eval_max_batches"] = cfg.eval_max_batches;
  j["checkpoint_interval"] = cfg.checkpoint_interval;
  j["adam_beta1"] = cfg.adam_beta1;
  j["adam_beta2"] = cfg.adam_beta2;
  j["adam_eps"] = cfg.adam_eps;
  j["train_corpus"] = cfg.train_corpus;
  j["val_corpus"] = cfg.val_corpus;
  j["out_dir"] = cfg.out_dir;
  j["seed"] = cfg.seed;
  j["precision"] = cfg.precision;
  return j.dump(2);
}

RunConfig run_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config: invalid JSON: ") + e.what());
  }
  RunConfig cfg;
  try {
    cfg.model = model_config_from_json(j.at("model").dump());
    cfg.steps = j.value("steps", cfg.steps);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.seq_len = j.value("seq_len", cfg.seq_len);
    cfg.lr = j.value("lr", cfg.lr);
    cfg.warmup_steps = j.value("warmup_steps", cfg.warmup_steps);
    cfg.lr_final_frac = j.value("lr_final_frac", cfg.lr_final_frac);
    cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
    cfg.grad_clip = j.value("grad_clip", cfg.grad_clip);
    cfg.eval_interval = j.value("eval_interval", cfg.eval_interval);
    cfg.eval_max_batches = j.value("eval_max_batches", cfg.eval_max_batches);
    cfg.checkpoint_interval = j.value("checkpoint_interval", cfg.checkpoint_interval);
    cfg.adam_beta1 = j.value("adam_beta1", cfg.adam_beta1);
    cfg.adam_beta2 = j.value("adam_beta2", cfg.adam_beta2);
    cfg.adam_eps = j.value("adam_eps", cfg.adam_eps);
    cfg.train_corpus = j.value("train_corpus", cfg.train_corpus);
    cfg.val_corpus = j.value("val_corpus", cfg.val_corpus);
    cfg.out_dir = j.value("out_dir", cfg.out_dir);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.precision = j.value("precision", cfg.precision);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  return cfg;
}

RunConfig run_config_from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("run config: cannot open '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return run_config_from_json(text);
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string metrics_record_json(const MetricsRecord& rec, bool include_wallclock) {
  std::string out = "{\"step\":" + std::to_string(rec.step);
  out += ",\"train_loss\":" + fmt_double(rec.train_loss);
  if (rec.val_loss) out += ",\"val_loss\":" + fmt_double(*rec.val_loss);
  out += ",\"lr\":" + fmt_double(rec.lr);
  out += ",\"grad_norm\":" + fmt_double(rec.grad_norm);
  out += ",\"tokens_seen\":" + std::to_string(rec.tokens_seen);
  if (include_wallclock) out += ",\"wallclock_s\":" + fmt_double(rec.wallclock_s);
  out += "}";
  return out;
}

double lr_at_step(std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps,
                  double lr, double final_frac) {
  if (warmup_steps > 0 && step < warmup_steps)
    return lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  const double lr_final = lr * final_frac;
  const double span = static_cast<double>(total_steps - warmup_steps);
  const double progress =
      span <= 0.0 ? 1.0 : static_cast<double>(step - warmup_steps) / span;
  return lr_final + 0.5 * (lr - lr_final) * (1.0 + std::cos(M_PI * std::min(progress, 1.0)));
}

double perplexity_from_loss(double loss) { return std::exp(loss); }

template <class S>
EvalResult evaluate_model(Model<S>& model, const std::vector<std::uint8_t>& corpus,
                          std::int64_t seq_len, std::int64_t batch_size,
                          std::int64_t max_batches) {
  TokenDataset ds(corpus, seq_len);
  const std::int64_t win = ds.window_len();
  EvalResult result;
  double total = 0.0;
  std::int64_t windows_done = 0;
  std::int64_t batches_done = 0;
  while (windows_done < ds.num_windows()) {
    if (max_batches > 0 && batches_done >= max_batches) break;
    const std::int64_t take = std::min<std::int64_t>(batch_size, ds.num_windows() - windows_done);
    std::vector<std::int32_t> ids(static_cast<std::size_t>(take * win));
    for (std::int64_t b = 0; b < take; ++b)
      ds.fill_window(windows_done + b,
                     std::span<std::int32_t>(ids.data() + b * win, static_cast<std::size_t>(win)));
    Tape<S> tape;
    Tensor<S> loss = model.loss(tape, ids, take, win);
    total += static_cast<double>(loss.item()) * static_cast<double>(take);
    windows_done += take;
    ++batches_done;
  }
  result.windows = windows_done;
  result.loss = windows_done > 0 ? total / static_cast<double>(windows_done) : 0.0;
  result.perplexity = perplexity_from_loss(result.loss);
  return result;
}

template <class S>
bool audit_param_groups(const AdamW<S>& opt, std::string* detail) {
  for (const auto& e : opt.entries()) {
    const ParamGroup expected = classify_param(e.name);
    if (e.group != expected) {
      if (detail)
        *detail = "parameter '" + e.name + "' sits in group " + param_group_name(e.group) +
                  ", expected " + param_group_name(expected);
      return false;
    }
    const bool is_static_hc = e.name.find(".static_") != std::string::npos;
    if (is_static_hc && e.group != ParamGroup::HcStatic) {
      if (detail) *detail = "static weight '" + e.name + "' escaped the no-decay group";
      return false;
    }
  }
  if (detail) detail->clear();
  return true;
}

template <class S>
TrainOutput<S> train_run(const RunConfig& cfg) {
  cfg.validate();
  tune_allocator();
  namespace fs = std::filesystem;
  if (!cfg.out_dir.empty()) fs::create_directories(cfg.out_dir);
  const std::string metrics_path =
      cfg.out_dir.empty() ? "" : (fs::path(cfg.out_dir) / "metrics.jsonl").string();
  std::ofstream metrics_os;
  if (!metrics_path.empty()) {
    metrics_os.open(metrics_path, std::ios::trunc);
    if (!metrics_os) throw IoError("train: cannot open '" + metrics_path + "'");
  }

  const auto train_bytes = read_corpus_bytes(cfg.train_corpus);
  const auto val_bytes = read_corpus_bytes(cfg.val_corpus);
  TokenDataset ds(train_bytes, cfg.seq_len);
  BatchSampler sampler(ds.num_windows(), cfg.seed);
  Rng dropout_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  Model<S> model(cfg.model);
  typename AdamW<S>::Options opts;
  opts.beta1 = cfg.adam_beta1;
  opts.beta2 = cfg.adam_beta2;
  opts.eps = cfg.adam_eps;
  opts.weight_decay = cfg.weight_decay;
  AdamW<S> opt(model.named_params(), opts);
  {
    std::string detail;
    if (!audit_param_groups(opt, &detail)) throw ConfigError("train: group audit failed: " + detail);
  }

  const std::int64_t win = ds.window_len();
  std::vector<std::int32_t> ids(static_cast<std::size_t>(cfg.batch_size * win));

  auto save_ckpt = [&](const std::string& name, std::uint64_t step) {
    std::string detail;
    if (!audit_param_groups(opt, &detail))
      throw ConfigError("train: group audit failed at checkpoint: " + detail);
    Checkpoint<S> ckpt;
    ckpt.config = cfg.model;
    ckpt.step = step;
    ckpt.rng = dropout_rng.state();
    for (auto& [pname, t] : model.named_params()) ckpt.tensors.emplace_back(pname, t);
    for (auto& [sname, t] : opt.named_state()) ckpt.tensors.emplace_back(sname, t);
    const std::string path =
        cfg.out_dir.empty() ? name : (fs::path(cfg.out_dir) / name).string();
    save_checkpoint(path, ckpt);
    return path;
  };

  TrainOutput<S> out;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::int64_t step = 0; step < cfg.steps; ++step) {
    for (std::int64_t b = 0; b < cfg.batch_size; ++b)
      ds.fill_window(sampler.next(),
                     std::span<std::int32_t>(ids.data() + b * win, static_cast<std::size_t>(win)));

    opt.zero_grad();
    Tape<S> tape;
    Tensor<S> loss = model.loss(tape, ids, cfg.batch_size, win,
                                cfg.model.dropout > 0.0 ? &dropout_rng : nullptr);
    const double loss_v = static_cast<double>(loss.item());
    if (!std::isfinite(loss_v)) {
      if (metrics_os) {
        metrics_os << "{\"event\":\"divergence\",\"step\":" << step << "}" << std::endl;
      }
      throw EvalError("train: non-finite loss at step " + std::to_string(step));
    }
    tape.backward(loss);

    const double grad_norm = opt.clip_global_norm(cfg.grad_clip);
    const double lr = lr_at_step(step, cfg.steps, cfg.warmup_steps, cfg.lr, cfg.lr_final_frac);
    opt.step(lr);

    MetricsRecord rec;
    rec.step = step;
    rec.train_loss = loss_v;
    rec.lr = lr;
    rec.grad_norm = grad_norm;
    rec.tokens_seen = (step + 1) * cfg.batch_size * win;
    rec.wallclock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const bool last = step + 1 == cfg.steps;
    if ((cfg.eval_interval > 0 && (step + 1) % cfg.eval_interval == 0) || last) {
      const EvalResult ev =
          evaluate_model(model, val_bytes, cfg.seq_len, cfg.batch_size, cfg.eval_max_batches);
      rec.val_loss = ev.loss;
      if (last) out.final_val_loss = ev.loss;
    }
    if (cfg.checkpoint_interval > 0 && (step + 1) % cfg.checkpoint_interval == 0 && !last)
      save_ckpt("ckpt_step" + std::to_string(step + 1) + ".bin",
                static_cast<std::uint64_t>(step + 1));

    if (metrics_os) metrics_os << metrics_record_json(rec) << "\n" << std::flush;
    out.metrics.push_back(std::move(rec));
  }

  out.checkpoint_path = save_ckpt("ckpt_final.bin", static_cast<std::uint64_t>(cfg.steps));
  return out;
}

template EvalResult evaluate_model(Model<float>&, const std::vector<std::uint8_t>&, std::int64_t,
                                   std::int64_t, std::int64_t);
template EvalResult evaluate_model(Model<double>&, const std::vector<std::uint8_t>&, std::int64_t,
                                   std::int64_t, std::int64_t);
template bool audit_param_groups(const AdamW<float>&, std::string*);
template bool audit_param_groups(const AdamW<double>&, std::string*);
template TrainOutput<float> train_run(const RunConfig&);
template TrainOutput<double> train_run(const RunConfig&);

}  // namespace hc
