#include "hc/model.hpp"

#include <cmath>
#include <limits>

#include "json.hpp"

namespace hc {

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::PreNorm: return "prenorm";
    case Variant::PostNorm: return "postnorm";
    case Variant::Shc: return "shc";
    case Variant::Dhc: return "dhc";
  }
  throw ConfigError("unknown variant");
}

Variant variant_from_name(const std::string& name) {
  if (name == "prenorm") return Variant::PreNorm;
  if (name == "postnorm") return Variant::PostNorm;
  if (name == "shc") return Variant::Shc;
  if (name == "dhc") return Variant::Dhc;
  throw ConfigError("unknown variant '" + name + "'");
}

void ModelConfig::validate() const {
  if (layers < 1) throw ConfigError("config: layers must be >= 1");
  if (d_model < 2) throw ConfigError("config: d_model must be >= 2");
  if (heads < 1 || d_model % heads != 0)
    throw ConfigError("config: d_model must be divisible by heads");
  if ((d_model / heads) % 2 != 0)
    throw ConfigError("config: head width must be even for the rotary embedding");
  if (d_ffn < 1) throw ConfigError("config: d_ffn must be >= 1");
  if (vocab < 2) throw ConfigError("config: vocab must be >= 2");
  if (is_hyper() && n < 1) throw ConfigError("config: expansion rate n must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("config: dropout must be in [0, 1)");
}

std::string model_config_to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["layers"] = cfg.layers;
  j["d_model"] = cfg.d_model;
  j["heads"] = cfg.heads;
  j["d_ffn"] = cfg.d_ffn;
  j["vocab"] = cfg.vocab;
  j["n"] = cfg.n;
  j["variant"] = variant_name(cfg.variant);
  j["tanh_enabled"] = cfg.tanh_enabled;
  j["tie_embeddings"] = cfg.tie_embeddings;
  j["dhc_norm"] = cfg.dhc_norm == HcNormKind::Rms ? "rms" : "layer";
  j["dropout"] = cfg.dropout;
  j["seed"] = cfg.seed;
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  ModelConfig cfg;
  try {
    cfg.layers = j.at("layers").get<std::int64_t>();
    cfg.d_model = j.at("d_model").get<std::int64_t>();
    cfg.heads = j.value("heads", cfg.heads);
    cfg.d_ffn = j.at("d_ffn").get<std::int64_t>();
    cfg.vocab = j.value("vocab", cfg.vocab);
    cfg.n = j.value("n", cfg.n);
    cfg.variant = variant_from_name(j.value("variant", std::string("prenorm")));
    cfg.tanh_enabled = j.value("tanh_enabled", cfg.tanh_enabled);
    cfg.tie_embeddings = j.value("tie_embeddings", cfg.tie_embeddings);
    const std::string norm = j.value("dhc_norm", std::string("rms"));
    if (norm == "rms")
      cfg.dhc_norm = HcNormKind::Rms;
    else if (norm == "layer")
      cfg.dhc_norm = HcNormKind::Layer;
    else
      throw ConfigError("config: unknown dhc_norm '" + norm + "'");
    cfg.dropout = j.value("dropout", cfg.dropout);
    cfg.seed = j.value("seed", cfg.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

template <class S>
Model<S>::Model(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(cfg_.seed);
  const std::int64_t d = cfg_.d_model;
  const double init_std = 0.02;
  // Row-summing the final hyper hidden matrix scales the output stream by up
  // to n; shrinking the output-module init keeps its std at the baseline's.
  const double out_std = cfg_.is_hyper() ? init_std / std::sqrt(static_cast<double>(cfg_.n))
                                         : init_std;

  tok_embed_ = Tensor<S>::truncated_normal({cfg_.vocab, d}, rng, init_std, true);
  if (!cfg_.tie_embeddings)
    unembed_ = Tensor<S>::truncated_normal({cfg_.vocab, d}, rng, init_std, true);

  blocks_.resize(static_cast<std::size_t>(cfg_.layers));
  for (std::int64_t i = 0; i < cfg_.layers; ++i) {
    Block<S>& blk = blocks_[static_cast<std::size_t>(i)];
    blk.w_qkv = Tensor<S>::truncated_normal({d, 3 * d}, rng, init_std, true);
    blk.w_out = Tensor<S>::truncated_normal({d, d}, rng, out_std, true);
    blk.w_ffn1 = Tensor<S>::truncated_normal({d, cfg_.d_ffn}, rng, init_std, true);
    blk.w_ffn2 = Tensor<S>::truncated_normal({cfg_.d_ffn, d}, rng, out_std, true);
    if (cfg_.is_hyper()) {
      // Sites are numbered consecutively over depth: attention 2i, ffn 2i+1.
      if (cfg_.variant == Variant::Shc) {
        blk.hc_attn = HcSite<S>::static_init(2 * i, cfg_.n);
        blk.hc_ffn = HcSite<S>::static_init(2 * i + 1, cfg_.n);
      } else {
        blk.hc_attn =
            HcSite<S>::dynamic_init(2 * i, cfg_.n, d, cfg_.tanh_enabled, cfg_.dhc_norm);
        blk.hc_ffn =
            HcSite<S>::dynamic_init(2 * i + 1, cfg_.n, d, cfg_.tanh_enabled, cfg_.dhc_norm);
      }
    }
  }
}

template <class S>
Tensor<S> Model<S>::causal_mask(std::int64_t seq) const {
  Tensor<S> mask = Tensor<S>::zeros({1, seq, seq});
  auto mv = mask.value();
  const S neg_inf = -std::numeric_limits<S>::infinity();
  for (std::int64_t i = 0; i < seq; ++i)
    for (std::int64_t j = i + 1; j < seq; ++j) mv[static_cast<std::size_t>(i * seq + j)] = neg_inf;
  return mask;
}

template <class S>
std::pair<Tensor<S>, Tensor<S>> Model<S>::rope_tables(std::int64_t seq) const {
  const std::int64_t hd = cfg_.d_model / cfg_.heads;
  const std::int64_t half = hd / 2;
  Tensor<S> cos_t = Tensor<S>::zeros({1, seq, hd});
  Tensor<S> sin_t = Tensor<S>::zeros({1, seq, hd});
  auto cv = cos_t.value();
  auto sv = sin_t.value();
  for (std::int64_t t = 0; t < seq; ++t)
    for (std::int64_t i = 0; i < half; ++i) {
      const double theta =
          static_cast<double>(t) *
          std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(hd));
      const S c = static_cast<S>(std::cos(theta));
      const S s = static_cast<S>(std::sin(theta));
      cv[static_cast<std::size_t>(t * hd + i)] = c;
      cv[static_cast<std::size_t>(t * hd + half + i)] = c;
      sv[static_cast<std::size_t>(t * hd + i)] = s;
      sv[static_cast<std::size_t>(t * hd + half + i)] = s;
    }
  return {cos_t, sin_t};
}

namespace {

// x * cos + rotate_half(x) * sin, applied to (B*H, T, hd).
template <class S>
Tensor<S> apply_rope(Tape<S>& tape, const Tensor<S>& x, const Tensor<S>& cos_t,
                     const Tensor<S>& sin_t) {
  const std::int64_t hd = x.dim(2);
  const std::int64_t half = hd / 2;
  Tensor<S> x1 = ops::slice(tape, x, 2, 0, half);
  Tensor<S> x2 = ops::slice(tape, x, 2, half, half);
  Tensor<S> rot = ops::concat<S>(tape, {ops::scale(tape, x2, -1.0), x1}, 2);
  return ops::add(tape, ops::mul(tape, x, cos_t), ops::mul(tape, rot, sin_t));
}

}  // namespace

template <class S>
Tensor<S> Model<S>::attention(Tape<S>& tape, const Tensor<S>& x, const Block<S>& blk,
                              std::int64_t batch, std::int64_t seq, const Tensor<S>& mask,
                              const Tensor<S>& rope_cos, const Tensor<S>& rope_sin,
                              bool norm_first) {
  const std::int64_t d = cfg_.d_model;
  const std::int64_t heads = cfg_.heads;
  const std::int64_t hd = d / heads;

  Tensor<S> h = norm_first ? ops::rms_norm(tape, x) : x;
  Tensor<S> qkv = ops::matmul(tape, h, blk.w_qkv);  // (B*T, 3d)

  auto split_heads = [&](Tensor<S> part) {
    part = ops::reshape(tape, part, {batch, seq, heads, hd});
    part = ops::permute(tape, part, {0, 2, 1, 3});  // (B, H, T, hd)
    return ops::reshape(tape, part, {batch * heads, seq, hd});
  };
  Tensor<S> q = split_heads(ops::slice(tape, qkv, 1, 0, d));
  Tensor<S> k = split_heads(ops::slice(tape, qkv, 1, d, d));
  Tensor<S> v = split_heads(ops::slice(tape, qkv, 1, 2 * d, d));

  q = apply_rope(tape, q, rope_cos, rope_sin);
  k = apply_rope(tape, k, rope_cos, rope_sin);

  Tensor<S> scores = ops::scale(tape, ops::bmm_nt(tape, q, k),
                                1.0 / std::sqrt(static_cast<double>(hd)));
  scores = ops::add(tape, scores, mask);
  Tensor<S> probs = ops::softmax_last(tape, scores);
  Tensor<S> ctx = ops::bmm(tape, probs, v);  // (B*H, T, hd)

  ctx = ops::reshape(tape, ctx, {batch, heads, seq, hd});
  ctx = ops::permute(tape, ctx, {0, 2, 1, 3});
  ctx = ops::reshape(tape, ctx, {batch * seq, d});
  return ops::matmul(tape, ctx, blk.w_out);
}

template <class S>
Tensor<S> Model<S>::ffn(Tape<S>& tape, const Tensor<S>& x, const Block<S>& blk,
                        bool norm_first) {
  Tensor<S> h = norm_first ? ops::rms_norm(tape, x) : x;
  h = ops::matmul(tape, h, blk.w_ffn1);
  h = ops::gelu(tape, h);
  return ops::matmul(tape, h, blk.w_ffn2);
}

template <class S>
Tensor<S> Model<S>::forward(Tape<S>& tape, const std::vector<std::int32_t>& ids,
                            std::int64_t batch, std::int64_t seq, ForwardTrace<S>* trace,
                            Rng* dropout_rng) {
  if (static_cast<std::int64_t>(ids.size()) != batch * seq)
    throw ShapeError("forward: ids size does not match batch * seq");
  if (trace) {
    trace->site_inputs.clear();
    trace->site_hyper.clear();
    trace->tokens = batch * seq;
  }

  const bool hyper = cfg_.is_hyper();
  const bool use_dropout = cfg_.dropout > 0.0 && dropout_rng != nullptr;
  auto drop = [&](Tensor<S> t) {
    return use_dropout ? ops::dropout(tape, t, cfg_.dropout, *dropout_rng) : t;
  };
  auto record_input = [&](const Tensor<S>& h0) {
    if (trace) trace->site_inputs.emplace_back(h0.value().begin(), h0.value().end());
  };
  auto record_hyper = [&](const Tensor<S>& h) {
    if (trace) trace->site_hyper.emplace_back(h.value().begin(), h.value().end());
  };

  Tensor<S> x = ops::embedding(tape, tok_embed_, ids);
  Tensor<S> hyper_h;
  if (hyper) hyper_h = ops::replicate_rows(tape, x, cfg_.n);

  const Tensor<S> mask = causal_mask(seq);
  const auto [rope_cos, rope_sin] = rope_tables(seq);

  for (Block<S>& blk : blocks_) {
    if (hyper) {
      {
        record_hyper(hyper_h);
        WidthResult<S> wr = width_connection(tape, blk.hc_attn, hyper_h);
        record_input(wr.layer_input);
        Tensor<S> u =
            attention(tape, wr.layer_input, blk, batch, seq, mask, rope_cos, rope_sin, true);
        hyper_h = depth_connection(tape, wr, drop(u));
      }
      {
        record_hyper(hyper_h);
        WidthResult<S> wr = width_connection(tape, blk.hc_ffn, hyper_h);
        record_input(wr.layer_input);
        Tensor<S> u = ffn(tape, wr.layer_input, blk, true);
        hyper_h = depth_connection(tape, wr, drop(u));
      }
    } else if (cfg_.variant == Variant::PreNorm) {
      record_input(x);
      x = ops::add(tape, x,
                   drop(attention(tape, x, blk, batch, seq, mask, rope_cos, rope_sin, true)));
      record_input(x);
      x = ops::add(tape, x, drop(ffn(tape, x, blk, true)));
    } else {  // PostNorm
      record_input(x);
      x = ops::layer_norm(
          tape,
          ops::add(tape, x,
                   drop(attention(tape, x, blk, batch, seq, mask, rope_cos, rope_sin, false))));
      record_input(x);
      x = ops::layer_norm(tape, ops::add(tape, x, drop(ffn(tape, x, blk, false))));
    }
  }

  Tensor<S> pooled = hyper ? ops::sum_axis(tape, hyper_h, 1) : x;
  // eps = 0: the head norm must be exactly scale-invariant so that the
  // row-summed hyper hidden (n times the baseline stream at init) produces
  // the baseline's logits.
  Tensor<S> final_h = ops::rms_norm(tape, pooled, 0.0);
  return ops::matmul_nt(tape, final_h, cfg_.tie_embeddings ? tok_embed_ : unembed_);
}

template <class S>
Tensor<S> Model<S>::loss(Tape<S>& tape, const std::vector<std::int32_t>& ids,
                         std::int64_t batch, std::int64_t seq, Rng* dropout_rng) {
  if (seq < 2) throw ConfigError("loss: sequence length must be >= 2");
  Tensor<S> logits = forward(tape, ids, batch, seq, nullptr, dropout_rng);
  std::vector<std::int32_t> targets(static_cast<std::size_t>(batch * seq), -1);
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t t = 0; t + 1 < seq; ++t)
      targets[static_cast<std::size_t>(b * seq + t)] = ids[static_cast<std::size_t>(b * seq + t + 1)];
  return ops::softmax_cross_entropy(tape, logits, targets, -1);
}

template <class S>
std::vector<std::pair<std::string, Tensor<S>>> Model<S>::named_params() {
  std::vector<std::pair<std::string, Tensor<S>>> out;
  out.emplace_back("tok_embed", tok_embed_);
  if (!cfg_.tie_embeddings) out.emplace_back("unembed", unembed_);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = "block" + std::to_string(i) + ".";
    Block<S>& blk = blocks_[i];
    out.emplace_back(p + "w_qkv", blk.w_qkv);
    out.emplace_back(p + "w_out", blk.w_out);
    out.emplace_back(p + "w_ffn1", blk.w_ffn1);
    out.emplace_back(p + "w_ffn2", blk.w_ffn2);
    if (cfg_.is_hyper()) {
      for (auto* site_pair : {&blk.hc_attn, &blk.hc_ffn}) {
        const std::string sp =
            p + (site_pair == &blk.hc_attn ? "hc_attn." : "hc_ffn.");
        HcSite<S>& site = *site_pair;
        out.emplace_back(sp + "static_beta", site.static_beta);
        out.emplace_back(sp + "static_alpha", site.static_alpha);
        if (site.dynamic) {
          out.emplace_back(sp + "w_alpha", site.w_alpha);
          out.emplace_back(sp + "w_beta", site.w_beta);
          out.emplace_back(sp + "s_alpha", site.s_alpha);
          out.emplace_back(sp + "s_beta", site.s_beta);
          if (site.norm_kind == HcNormKind::Layer)
            out.emplace_back(sp + "norm_gain", site.norm_gain);
        }
      }
    }
  }
  return out;
}

template class Model<float>;
template class Model<double>;

}  // namespace hc
