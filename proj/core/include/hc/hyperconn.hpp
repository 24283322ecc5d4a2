#pragma once

#include <functional>
#include <utility>

#include "hc/algebra.hpp"
#include "hc/ops.hpp"

namespace hc {

// Pre-projection normalization of the dynamic coefficients. Rms carries no
// parameters; Layer carries a gain vector.
enum class HcNormKind { Rms, Layer };

// One hyper-connection site (two per transformer block). Holds the static
// B / A_m / A_r weights and, for the dynamic variant, the coefficient
// projections and their gates.
template <class S>
struct HcSite {
  std::int64_t n = 1;
  std::int64_t width = 0;  // d, dynamic variant only
  bool dynamic = false;
  bool tanh_enabled = true;
  HcNormKind norm_kind = HcNormKind::Rms;

  Tensor<S> static_beta;   // (n)
  Tensor<S> static_alpha;  // (n, n+1): column 0 = A_m, columns 1..n = A_r
  Tensor<S> w_alpha;       // (d, n+1), zero at init
  Tensor<S> w_beta;        // (d, 1), zero at init
  Tensor<S> s_alpha;       // (1), gate, 0.01 at init
  Tensor<S> s_beta;        // (1), gate, 0.01 at init
  Tensor<S> norm_gain;     // (d), Layer norm kind only

  // B = ones, A_m = e_{site_index mod n}, A_r = identity.
  static HcSite static_init(std::int64_t site_index, std::int64_t n);
  // Static part as above; projections zero so the site starts exactly static.
  static HcSite dynamic_init(std::int64_t site_index, std::int64_t n, std::int64_t width,
                             bool tanh_enabled, HcNormKind norm_kind);
};

// Output of the width connection for a batch of tokens.
template <class S>
struct WidthResult {
  Tensor<S> layer_input;  // (tokens, d): the A_m-weighted row mix (h0)
  Tensor<S> carried;      // (tokens, n, d): the A_r-mixed rows (H')
  Tensor<S> beta;         // (n) static or (tokens, n) dynamic
};

// H: (tokens, n, d). For the dynamic variant the coefficients are
// alpha = s_alpha * act(norm(H) W_alpha) + static_alpha (per token, per row)
// beta  = s_beta  * act(norm(H) W_beta)^T + static_beta
// where act is tanh when enabled and identity otherwise.
template <class S>
WidthResult<S> width_connection(Tape<S>& tape, const HcSite<S>& site, const Tensor<S>& h);

// Hhat row i = beta[i] * layer_out + carried row i.
template <class S>
Tensor<S> depth_connection(Tape<S>& tape, const WidthResult<S>& width,
                           const Tensor<S>& layer_out);

template <class S>
using LayerFn = std::function<Tensor<S>(Tape<S>&, const Tensor<S>&)>;

// depth_connection(width_connection(H), layer(layer_input)); one layer
// evaluation per call.
template <class S>
Tensor<S> hc_forward(Tape<S>& tape, const HcSite<S>& site, const LayerFn<S>& layer,
                     const Tensor<S>& h);

// Static weights of a site as plain doubles (B, A_m, A_r).
struct SiteWeights {
  DVec beta;
  DVec alpha_m;
  DMat alpha_r;
};

template <class S>
SiteWeights static_weights(const HcSite<S>& site);

// Dynamic coefficients at one token's hyper hidden matrix (n x d), as plain
// doubles: an independent re-derivation of the width-connection math used
// by the analysis exports.
template <class S>
void dhc_coefficients(const HcSite<S>& site, const DMat& hyper_hidden, DVec& beta_out,
                      DMat& alpha_out);

// Assembles the (n+1)x(n+1) matrix. The dynamic variant needs the token's
// hyper hidden matrix; omitting it throws ConfigError.
template <class S>
HCMatrix assemble_matrix(const HcSite<S>& site);
template <class S>
HCMatrix assemble_matrix(const HcSite<S>& site, const DMat& hyper_hidden);

// Depth-connection matrix [B; diag(A_r)] (2 x n) and width-connection
// matrix [A_m | A_r] (n x (n+1)).
template <class S>
std::pair<DMat, DMat> decouple(const HcSite<S>& site);

}  // namespace hc
