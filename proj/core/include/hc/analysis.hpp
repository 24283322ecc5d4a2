#pragma once

#include <string>
#include <vector>

#include "hc/model.hpp"

namespace hc::analysis {

// Dense cross-layer contribution weights obtained by expanding the
// hyper-connection recurrence over a stack of S sites. Rows are receiving
// layers (0 = embedding, S+1 = pre-unembedding sum), columns are source
// layers; entries with source >= receiver are zero.
struct UnfoldedConnections {
  DMat c0;               // contributions to layer inputs h0
  std::vector<DMat> ci;  // contributions to hyper-hidden rows 1..n
};

// sites[k] holds (B, A_m, A_r) of site k+1; the embedding row uses B = 1
// and the final row uses the all-ones A_m (the sum-pool).
UnfoldedConnections unfold(const std::vector<SiteWeights>& sites, std::int64_t n);

struct SimilarityEntry {
  std::int64_t site = 0;  // pair (site, site + 1), 0-based
  double median = 0.0;
  double p05 = 0.0;
  double p95 = 0.0;
};

struct SimilarityProfile {
  std::vector<SimilarityEntry> entries;
  std::int64_t tokens = 0;
  std::int64_t zero_excluded = 0;
};

// Cosine similarity between layer inputs of adjacent sites, aggregated over
// tokens (median and the 5th/95th percentiles). Tokens with a zero vector
// at either site are excluded and counted.
template <class S>
SimilarityProfile cosine_profile(Model<S>& model, const std::vector<std::int32_t>& ids,
                                 std::int64_t batch, std::int64_t seq);

// Per-site dynamic coefficients evaluated during a forward over the batch,
// averaged over tokens and positions. Model variant must be dhc.
template <class S>
std::vector<SiteWeights> dhc_effective_weights(Model<S>& model,
                                               const std::vector<std::int32_t>& ids,
                                               std::int64_t batch, std::int64_t seq);

// Static per-site weights of an shc model (the token-independent analogue).
template <class S>
std::vector<SiteWeights> shc_site_weights(Model<S>& model);

struct CostReport {
  // Parameter accounting (exact integers computed from the config).
  std::int64_t hc_params_per_site = 0;
  std::int64_t hc_params = 0;
  std::int64_t total_params = 0;
  double param_delta_rate = 0.0;

  // Per-token forward FLOPs, one multiply-accumulate = 2 FLOPs.
  std::int64_t width_mix_flops = 0;
  std::int64_t projection_flops = 0;
  std::int64_t depth_flops = 0;
  std::int64_t hc_flops_per_token = 0;
  std::int64_t baseline_flops_per_token = 0;
  double flops_delta_rate = 0.0;
};

CostReport count_params(const ModelConfig& cfg);
CostReport estimate_flops(const ModelConfig& cfg);
// Both of the above in one report.
CostReport cost_report(const ModelConfig& cfg);

// Sum over the actual parameter tensors; must equal the formula count.
template <class S>
std::int64_t measured_param_count(Model<S>& model);

struct ActivationMemory {
  double baseline_slots = 0.0;
  double hc_slots = 0.0;
  double ratio = 0.0;  // hc / baseline
};

// Value-slot estimate: baseline s*b*d*L*(34 + 5*a*s/d), plus 2*n*s*b*d*L
// for the hyper variants.
ActivationMemory estimate_activation_memory(const ModelConfig& cfg, std::int64_t batch,
                                            std::int64_t seqlen);

// ---- exports ----

// Writes connections_c0.csv ... connections_c<n>.csv under out_dir with
// "emb" / "out" labels on the boundary rows and columns.
std::vector<std::string> export_connections_csv(const UnfoldedConnections& unfolded,
                                                const std::string& out_dir);
std::string similarity_to_json(const SimilarityProfile& profile);
std::string cost_to_json(const CostReport& report);
std::string activation_memory_to_json(const ActivationMemory& mem);

}  // namespace hc::analysis
