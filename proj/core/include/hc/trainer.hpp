#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hc/checkpoint.hpp"
#include "hc/data.hpp"
#include "hc/optimizer.hpp"

namespace hc {

struct RunConfig {
  ModelConfig model;
  std::int64_t steps = 1000;
  std::int64_t batch_size = 8;
  std::int64_t seq_len = 128;
  double lr = 2e-3;
  std::int64_t warmup_steps = 100;
  double lr_final_frac = 0.1;  // cosine decays to lr * this
  double weight_decay = 0.1;
  double grad_clip = 1.0;
  std::int64_t eval_interval = 250;
  std::int64_t eval_max_batches = 0;  // 0 = whole validation set
  std::int64_t checkpoint_interval = 0;  // 0 = final only
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.95;
  double adam_eps = 1e-8;
  std::string train_corpus;
  std::string val_corpus;
  std::string out_dir;
  std::uint64_t seed = 0;  // batch order (model init uses model.seed)
  std::string precision = "f32";

  void validate() const;
};

std::string run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const std::string& text);
RunConfig run_config_from_file(const std::string& path);

struct MetricsRecord {
  std::int64_t step = 0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
  double lr = 0.0;
  double grad_norm = 0.0;
  std::int64_t tokens_seen = 0;
  double wallclock_s = 0.0;
};

// One JSON object per line; floats printed with round-trip precision.
std::string metrics_record_json(const MetricsRecord& rec, bool include_wallclock = true);

// Linear warmup to lr, then cosine decay to lr * final_frac.
double lr_at_step(std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps,
                  double lr, double final_frac);

// Keeps large activation buffers inside the malloc arena instead of handing
// the pages back to the kernel after every step. Called once by train_run;
// safe to call from tools that drive many forwards directly.
void tune_allocator();

double perplexity_from_loss(double loss);

struct EvalResult {
  double loss = 0.0;
  double perplexity = 0.0;
  std::int64_t windows = 0;
};

// Mean NLL over non-overlapping windows of the corpus.
template <class S>
EvalResult evaluate_model(Model<S>& model, const std::vector<std::uint8_t>& corpus,
                          std::int64_t seq_len, std::int64_t batch_size,
                          std::int64_t max_batches = 0);

// Checks that every trainable parameter sits in exactly one optimizer group
// and that all static hyper-connection weights are in the no-decay group.
template <class S>
bool audit_param_groups(const AdamW<S>& opt, std::string* detail = nullptr);

template <class S>
struct TrainOutput {
  std::vector<MetricsRecord> metrics;
  double final_val_loss = 0.0;
  std::string checkpoint_path;
};

// Full training run per the RunConfig; writes metrics.jsonl and checkpoints
// under out_dir. Aborts with EvalError after writing a diagnostic record if
// the loss goes non-finite.
template <class S>
TrainOutput<S> train_run(const RunConfig& cfg);

extern template EvalResult evaluate_model(Model<float>&, const std::vector<std::uint8_t>&,
                                          std::int64_t, std::int64_t, std::int64_t);
extern template EvalResult evaluate_model(Model<double>&, const std::vector<std::uint8_t>&,
                                          std::int64_t, std::int64_t, std::int64_t);
extern template bool audit_param_groups(const AdamW<float>&, std::string*);
extern template bool audit_param_groups(const AdamW<double>&, std::string*);
extern template TrainOutput<float> train_run(const RunConfig&);
extern template TrainOutput<double> train_run(const RunConfig&);

}  // namespace hc
