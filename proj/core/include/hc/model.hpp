#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hc/hyperconn.hpp"

namespace hc {

enum class Variant { PreNorm, PostNorm, Shc, Dhc };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct ModelConfig {
  std::int64_t layers = 2;  // transformer blocks
  std::int64_t d_model = 64;
  std::int64_t heads = 4;
  std::int64_t d_ffn = 256;
  std::int64_t vocab = 256;
  std::int64_t n = 1;  // expansion rate, hyper variants only
  Variant variant = Variant::PreNorm;
  bool tanh_enabled = true;
  bool tie_embeddings = true;
  HcNormKind dhc_norm = HcNormKind::Rms;
  double dropout = 0.0;
  std::uint64_t seed = 0;

  bool is_hyper() const { return variant == Variant::Shc || variant == Variant::Dhc; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

template <class S>
struct Block {
  Tensor<S> w_qkv;   // (d, 3d)
  Tensor<S> w_out;   // (d, d)
  Tensor<S> w_ffn1;  // (d, d_ffn)
  Tensor<S> w_ffn2;  // (d_ffn, d)
  HcSite<S> hc_attn;
  HcSite<S> hc_ffn;
};

// Values captured during an instrumented forward; used by the analyses.
template <class S>
struct ForwardTrace {
  // Layer input h0 at each site, (tokens * d) values, 2L sites.
  std::vector<std::vector<S>> site_inputs;
  // Hyper hidden entering each site, (tokens * n * d) values, hyper variants.
  std::vector<std::vector<S>> site_hyper;
  std::int64_t tokens = 0;
};

// Decoder-only byte-level transformer with a selectable residual scheme.
// Attention and FFN sublayers have their norm folded in, so each hyper-
// connection site wraps a bare d -> d map.
template <class S>
class Model {
 public:
  explicit Model(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }

  // ids are row-major (batch, seq); returns logits (batch * seq, vocab).
  Tensor<S> forward(Tape<S>& tape, const std::vector<std::int32_t>& ids, std::int64_t batch,
                    std::int64_t seq, ForwardTrace<S>* trace = nullptr,
                    Rng* dropout_rng = nullptr);

  // Mean next-token NLL over positions 0..seq-2 of every sequence.
  Tensor<S> loss(Tape<S>& tape, const std::vector<std::int32_t>& ids, std::int64_t batch,
                 std::int64_t seq, Rng* dropout_rng = nullptr);

  // Stable name -> tensor listing (checkpoint and optimizer order).
  std::vector<std::pair<std::string, Tensor<S>>> named_params();

  std::vector<Block<S>>& blocks() { return blocks_; }
  Tensor<S>& tok_embed() { return tok_embed_; }
  Tensor<S>& unembed() { return cfg_.tie_embeddings ? tok_embed_ : unembed_; }

  // Number of hyper-connection sites (2 per block; 0 for plain variants).
  std::int64_t num_sites() const { return cfg_.is_hyper() ? 2 * cfg_.layers : 0; }

 private:
  Tensor<S> attention(Tape<S>& tape, const Tensor<S>& x, const Block<S>& blk,
                      std::int64_t batch, std::int64_t seq, const Tensor<S>& mask,
                      const Tensor<S>& rope_cos, const Tensor<S>& rope_sin, bool norm_first);
  Tensor<S> ffn(Tape<S>& tape, const Tensor<S>& x, const Block<S>& blk, bool norm_first);
  Tensor<S> causal_mask(std::int64_t seq) const;
  std::pair<Tensor<S>, Tensor<S>> rope_tables(std::int64_t seq) const;

  ModelConfig cfg_;
  Tensor<S> tok_embed_;  // (vocab, d)
  Tensor<S> unembed_;    // (vocab, d), untied only
  std::vector<Block<S>> blocks_;
};

extern template class Model<float>;
extern template class Model<double>;

}  // namespace hc
