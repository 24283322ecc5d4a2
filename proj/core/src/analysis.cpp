#include "hc/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace hc::analysis {

namespace {

// Percentile with linear interpolation between closest ranks.
double percentile(std::vector<double>& values, double p) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const double rank = p / 100.0 * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = static_cast<std::size_t>(std::ceil(rank));
  const double frac = rank - static_cast<double>(lo);
  return values[lo] * (1.0 - frac) + values[hi] * frac;
}

}  // namespace

UnfoldedConnections unfold(const std::vector<SiteWeights>& sites, std::int64_t n) {
  if (n < 1) throw ConfigError("unfold: expansion rate must be >= 1");
  const std::int64_t S = static_cast<std::int64_t>(sites.size());
  if (S < 1) throw ConfigError("unfold: need at least one site");
  for (const auto& site : sites)
    if (static_cast<std::int64_t>(site.beta.size()) != n || site.alpha_r.rows() != n ||
        site.alpha_r.cols() != n || static_cast<std::int64_t>(site.alpha_m.size()) != n)
      throw ConfigError("unfold: inconsistent expansion rate across sites");

  // B^j as 1 x n rows; index 0 is the embedding broadcast (all ones).
  std::vector<DMat> beta_rows;
  beta_rows.reserve(static_cast<std::size_t>(S + 1));
  beta_rows.push_back(DMat::ones(1, n));
  for (const auto& site : sites) beta_rows.push_back(DMat::from_row(site.beta));

  // A_m^k as n x 1 columns for k = 1..S; the final row sum-pools with ones.
  std::vector<DMat> am_cols;
  am_cols.reserve(static_cast<std::size_t>(S + 2));
  am_cols.push_back(DMat());  // unused k = 0 slot
  for (const auto& site : sites) am_cols.push_back(DMat::from_col(site.alpha_m));
  am_cols.push_back(DMat::ones(n, 1));

  UnfoldedConnections out;
  out.c0 = DMat(S + 2, S + 2);
  out.ci.assign(static_cast<std::size_t>(n), DMat(S + 2, S + 2));

  for (std::int64_t k = 1; k <= S + 1; ++k) {
    // P = A_r^{j+1} ... A_r^{k-1}, built backwards from the empty product.
    DMat prod = DMat::identity(n);
    for (std::int64_t j = k - 1; j >= 0; --j) {
      const DMat left = beta_rows[static_cast<std::size_t>(j)] * prod;  // 1 x n
      out.c0(k, j) = (left * am_cols[static_cast<std::size_t>(k)])(0, 0);
      if (k <= S) {
        const DMat row = left * sites[static_cast<std::size_t>(k - 1)].alpha_r;  // 1 x n
        for (std::int64_t i = 0; i < n; ++i)
          out.ci[static_cast<std::size_t>(i)](k, j) = row(0, i);
      }
      if (j >= 1) prod = sites[static_cast<std::size_t>(j - 1)].alpha_r * prod;
    }
  }
  return out;
}

template <class S>
SimilarityProfile cosine_profile(Model<S>& model, const std::vector<std::int32_t>& ids,
                                 std::int64_t batch, std::int64_t seq) {
  ForwardTrace<S> trace;
  Tape<S> tape;
  model.forward(tape, ids, batch, seq, &trace);
  const std::int64_t sites = static_cast<std::int64_t>(trace.site_inputs.size());
  const std::int64_t tokens = trace.tokens;
  const std::int64_t d = model.config().d_model;

  SimilarityProfile profile;
  profile.tokens = tokens;
  for (std::int64_t s = 0; s + 1 < sites; ++s) {
    const auto& a = trace.site_inputs[static_cast<std::size_t>(s)];
    const auto& b = trace.site_inputs[static_cast<std::size_t>(s + 1)];
    std::vector<double> cosines;
    cosines.reserve(static_cast<std::size_t>(tokens));
    for (std::int64_t t = 0; t < tokens; ++t) {
      double dot = 0.0, na = 0.0, nb = 0.0;
      for (std::int64_t c = 0; c < d; ++c) {
        const double av = static_cast<double>(a[static_cast<std::size_t>(t * d + c)]);
        const double bv = static_cast<double>(b[static_cast<std::size_t>(t * d + c)]);
        dot += av * bv;
        na += av * av;
        nb += bv * bv;
      }
      if (na == 0.0 || nb == 0.0) {
        ++profile.zero_excluded;
        continue;
      }
      cosines.push_back(dot / (std::sqrt(na) * std::sqrt(nb)));
    }
    SimilarityEntry entry;
    entry.site = s;
    entry.median = percentile(cosines, 50.0);
    entry.p05 = percentile(cosines, 5.0);
    entry.p95 = percentile(cosines, 95.0);
    profile.entries.push_back(entry);
  }
  return profile;
}

template <class S>
std::vector<SiteWeights> dhc_effective_weights(Model<S>& model,
                                               const std::vector<std::int32_t>& ids,
                                               std::int64_t batch, std::int64_t seq) {
  if (model.config().variant != Variant::Dhc)
    throw ConfigError("dhc_effective_weights: model variant is not dhc");
  if (ids.empty()) throw ConfigError("dhc_effective_weights: empty token batch");

  ForwardTrace<S> trace;
  Tape<S> tape;
  model.forward(tape, ids, batch, seq, &trace);

  const std::int64_t n = model.config().n;
  const std::int64_t d = model.config().d_model;
  const std::int64_t tokens = trace.tokens;
  std::vector<SiteWeights> out;

  std::int64_t site_idx = 0;
  for (auto& blk : model.blocks()) {
    for (auto* site : {&blk.hc_attn, &blk.hc_ffn}) {
      const auto& hvals = trace.site_hyper[static_cast<std::size_t>(site_idx)];
      DVec beta_acc(static_cast<std::size_t>(n), 0.0);
      DMat alpha_acc(n, n + 1);
      DMat h_token(n, d);
      DVec beta_tok;
      DMat alpha_tok;
      for (std::int64_t t = 0; t < tokens; ++t) {
        for (std::int64_t i = 0; i < n; ++i)
          for (std::int64_t c = 0; c < d; ++c)
            h_token(i, c) =
                static_cast<double>(hvals[static_cast<std::size_t>((t * n + i) * d + c)]);
        dhc_coefficients(*site, h_token, beta_tok, alpha_tok);
        for (std::int64_t i = 0; i < n; ++i) {
          beta_acc[static_cast<std::size_t>(i)] += beta_tok[static_cast<std::size_t>(i)];
          for (std::int64_t j = 0; j <= n; ++j) alpha_acc(i, j) += alpha_tok(i, j);
        }
      }
      const double inv = 1.0 / static_cast<double>(tokens);
      SiteWeights w;
      w.beta.resize(static_cast<std::size_t>(n));
      w.alpha_m.resize(static_cast<std::size_t>(n));
      w.alpha_r = DMat(n, n);
      for (std::int64_t i = 0; i < n; ++i) {
        w.beta[static_cast<std::size_t>(i)] = beta_acc[static_cast<std::size_t>(i)] * inv;
        w.alpha_m[static_cast<std::size_t>(i)] = alpha_acc(i, 0) * inv;
        for (std::int64_t j = 0; j < n; ++j) w.alpha_r(i, j) = alpha_acc(i, j + 1) * inv;
      }
      out.push_back(std::move(w));
      ++site_idx;
    }
  }
  return out;
}

template <class S>
std::vector<SiteWeights> shc_site_weights(Model<S>& model) {
  if (!model.config().is_hyper())
    throw ConfigError("shc_site_weights: model has no hyper-connection sites");
  std::vector<SiteWeights> out;
  for (auto& blk : model.blocks()) {
    out.push_back(static_weights(blk.hc_attn));
    out.push_back(static_weights(blk.hc_ffn));
  }
  return out;
}

namespace {

std::int64_t hc_params_per_site(const ModelConfig& cfg) {
  const std::int64_t n = cfg.n;
  const std::int64_t d = cfg.d_model;
  switch (cfg.variant) {
    case Variant::Shc: return n * (n + 2);
    case Variant::Dhc: {
      const std::int64_t norm_params = cfg.dhc_norm == HcNormKind::Layer ? d : 0;
      return norm_params + d * (n + 2) + n * (n + 2) + 2;
    }
    default: return 0;
  }
}

std::int64_t baseline_matmul_params(const ModelConfig& cfg) {
  const std::int64_t d = cfg.d_model;
  const std::int64_t per_block = 3 * d * d + d * d + 2 * d * cfg.d_ffn;
  // The unembedding matmul runs whether or not its weights are tied.
  return cfg.layers * per_block + cfg.vocab * d;
}

}  // namespace

CostReport count_params(const ModelConfig& cfg) {
  cfg.validate();
  CostReport report;
  report.hc_params_per_site = hc_params_per_site(cfg);
  report.hc_params = report.hc_params_per_site * 2 * cfg.layers;
  const std::int64_t d = cfg.d_model;
  std::int64_t total = cfg.vocab * d;                      // embedding
  if (!cfg.tie_embeddings) total += cfg.vocab * d;         // unembedding
  total += cfg.layers * (3 * d * d + d * d + 2 * d * cfg.d_ffn);
  total += report.hc_params;
  report.total_params = total;
  report.param_delta_rate =
      static_cast<double>(report.hc_params) / static_cast<double>(report.total_params);
  return report;
}

CostReport estimate_flops(const ModelConfig& cfg) {
  cfg.validate();
  if (cfg.is_hyper() && cfg.n < 1) throw ConfigError("estimate_flops: n must be >= 1");
  CostReport report;
  const std::int64_t d = cfg.d_model;
  const std::int64_t n = cfg.n;
  const std::int64_t sites = cfg.is_hyper() ? 2 * cfg.layers : 0;

  const std::int64_t width_macs = cfg.is_hyper() ? d * n * (n + 1) : 0;
  const std::int64_t proj_macs = cfg.variant == Variant::Dhc ? d * (n + 1) + d : 0;
  const std::int64_t depth_macs = cfg.is_hyper() ? n * d : 0;

  report.width_mix_flops = 2 * width_macs * sites;
  report.projection_flops = 2 * proj_macs * sites;
  report.depth_flops = 2 * depth_macs * sites;
  report.hc_flops_per_token =
      report.width_mix_flops + report.projection_flops + report.depth_flops;
  report.baseline_flops_per_token = 2 * baseline_matmul_params(cfg);
  report.flops_delta_rate =
      static_cast<double>(report.hc_flops_per_token) /
      static_cast<double>(report.baseline_flops_per_token + report.hc_flops_per_token);
  return report;
}

CostReport cost_report(const ModelConfig& cfg) {
  CostReport params = count_params(cfg);
  const CostReport flops = estimate_flops(cfg);
  params.width_mix_flops = flops.width_mix_flops;
  params.projection_flops = flops.projection_flops;
  params.depth_flops = flops.depth_flops;
  params.hc_flops_per_token = flops.hc_flops_per_token;
  params.baseline_flops_per_token = flops.baseline_flops_per_token;
  params.flops_delta_rate = flops.flops_delta_rate;
  return params;
}

template <class S>
std::int64_t measured_param_count(Model<S>& model) {
  std::int64_t total = 0;
  for (auto& [name, t] : model.named_params()) total += t.numel();
  return total;
}

ActivationMemory estimate_activation_memory(const ModelConfig& cfg, std::int64_t batch,
                                            std::int64_t seqlen) {
  cfg.validate();
  if (batch < 1 || seqlen < 1)
    throw ConfigError("estimate_activation_memory: batch and seqlen must be >= 1");
  ActivationMemory mem;
  const double s = static_cast<double>(seqlen);
  const double b = static_cast<double>(batch);
  const double d = static_cast<double>(cfg.d_model);
  const double L = static_cast<double>(cfg.layers);
  const double a = static_cast<double>(cfg.heads);
  mem.baseline_slots = s * b * d * L * (34.0 + 5.0 * a * s / d);
  mem.hc_slots = cfg.is_hyper() ? 2.0 * static_cast<double>(cfg.n) * s * b * d * L : 0.0;
  mem.ratio = mem.hc_slots / mem.baseline_slots;
  return mem;
}

namespace {

void write_matrix_csv(const std::string& path, const DMat& m) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("export: cannot open '" + path + "'");
  const std::int64_t S = m.rows() - 2;
  auto label = [S](std::int64_t idx) -> std::string {
    if (idx == 0) return "emb";
    if (idx == S + 1) return "out";
    return std::to_string(idx);
  };
  os << "layer";
  for (std::int64_t c = 0; c < m.cols(); ++c) os << "," << label(c);
  os << "\n";
  char buf[64];
  for (std::int64_t r = 0; r < m.rows(); ++r) {
    os << label(r);
    for (std::int64_t c = 0; c < m.cols(); ++c) {
      std::snprintf(buf, sizeof(buf), "%.12g", m(r, c));
      os << "," << buf;
    }
    os << "\n";
  }
}

}  // namespace

std::vector<std::string> export_connections_csv(const UnfoldedConnections& unfolded,
                                                const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::vector<std::string> paths;
  {
    const std::string p = (fs::path(out_dir) / "connections_c0.csv").string();
    write_matrix_csv(p, unfolded.c0);
    paths.push_back(p);
  }
  for (std::size_t i = 0; i < unfolded.ci.size(); ++i) {
    const std::string p =
        (fs::path(out_dir) / ("connections_c" + std::to_string(i + 1) + ".csv")).string();
    write_matrix_csv(p, unfolded.ci[i]);
    paths.push_back(p);
  }
  return paths;
}

std::string similarity_to_json(const SimilarityProfile& profile) {
  nlohmann::json j;
  j["tokens"] = profile.tokens;
  j["zero_excluded"] = profile.zero_excluded;
  j["entries"] = nlohmann::json::array();
  for (const auto& e : profile.entries) {
    nlohmann::json je;
    je["site"] = e.site;
    je["median"] = e.median;
    je["p05"] = e.p05;
    je["p95"] = e.p95;
    j["entries"].push_back(je);
  }
  return j.dump(2);
}

std::string cost_to_json(const CostReport& report) {
  nlohmann::json j;
  j["hc_params_per_site"] = report.hc_params_per_site;
  j["hc_params"] = report.hc_params;
  j["total_params"] = report.total_params;
  j["param_delta_rate"] = report.param_delta_rate;
  j["width_mix_flops"] = report.width_mix_flops;
  j["projection_flops"] = report.projection_flops;
  j["depth_flops"] = report.depth_flops;
  j["hc_flops_per_token"] = report.hc_flops_per_token;
  j["baseline_flops_per_token"] = report.baseline_flops_per_token;
  j["flops_delta_rate"] = report.flops_delta_rate;
  return j.dump(2);
}

std::string activation_memory_to_json(const ActivationMemory& mem) {
  nlohmann::json j;
  j["baseline_slots"] = mem.baseline_slots;
  j["hc_slots"] = mem.hc_slots;
  j["ratio"] = mem.ratio;
  return j.dump(2);
}

template SimilarityProfile cosine_profile(Model<float>&, const std::vector<std::int32_t>&,
                                          std::int64_t, std::int64_t);
template SimilarityProfile cosine_profile(Model<double>&, const std::vector<std::int32_t>&,
                                          std::int64_t, std::int64_t);
template std::vector<SiteWeights> dhc_effective_weights(Model<float>&,
                                                        const std::vector<std::int32_t>&,
                                                        std::int64_t, std::int64_t);
template std::vector<SiteWeights> dhc_effective_weights(Model<double>&,
                                                        const std::vector<std::int32_t>&,
                                                        std::int64_t, std::int64_t);
template std::vector<SiteWeights> shc_site_weights(Model<float>&);
template std::vector<SiteWeights> shc_site_weights(Model<double>&);
template std::int64_t measured_param_count(Model<float>&);
template std::int64_t measured_param_count(Model<double>&);

}  // namespace hc::analysis
