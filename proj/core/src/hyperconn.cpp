#include "hc/hyperconn.hpp"

#include <cmath>
#include <string>

namespace hc {

template <class S>
HcSite<S> HcSite<S>::static_init(std::int64_t site_index, std::int64_t n) {
  if (n < 1) throw ConfigError("HcSite: expansion rate must be >= 1, got " + std::to_string(n));
  if (site_index < 0) throw ConfigError("HcSite: negative site index");
  HcSite<S> site;
  site.n = n;
  site.dynamic = false;
  site.static_beta = Tensor<S>::ones({n}, true);
  site.static_alpha = Tensor<S>::zeros({n, n + 1}, true);
  auto a = site.static_alpha.value();
  const std::int64_t sel = site_index % n;
  a[static_cast<std::size_t>(sel * (n + 1))] = S(1);  // A_m = e_{k mod n}
  for (std::int64_t i = 0; i < n; ++i)
    a[static_cast<std::size_t>(i * (n + 1) + 1 + i)] = S(1);  // A_r = identity
  return site;
}

template <class S>
HcSite<S> HcSite<S>::dynamic_init(std::int64_t site_index, std::int64_t n, std::int64_t width,
                                  bool tanh_enabled, HcNormKind norm_kind) {
  HcSite<S> site = static_init(site_index, n);
  if (width < 1) throw ConfigError("HcSite: width must be >= 1");
  site.dynamic = true;
  site.width = width;
  site.tanh_enabled = tanh_enabled;
  site.norm_kind = norm_kind;
  site.w_alpha = Tensor<S>::zeros({width, n + 1}, true);
  site.w_beta = Tensor<S>::zeros({width, 1}, true);
  site.s_alpha = Tensor<S>::filled({1}, S(0.01), true);
  site.s_beta = Tensor<S>::filled({1}, S(0.01), true);
  if (norm_kind == HcNormKind::Layer) site.norm_gain = Tensor<S>::ones({width}, true);
  return site;
}

template <class S>
WidthResult<S> width_connection(Tape<S>& tape, const HcSite<S>& site, const Tensor<S>& h) {
  if (h.rank() != 3 || h.dim(1) != site.n)
    throw ShapeError("width_connection: expected (tokens, " + std::to_string(site.n) +
                     ", d) hyper hidden, got " + shape_str(h.shape()));
  const std::int64_t tokens = h.dim(0);
  const std::int64_t n = site.n;
  const std::int64_t d = h.dim(2);
  if (site.dynamic && d != site.width)
    throw ShapeError("width_connection: width mismatch, site " + std::to_string(site.width) +
                     " vs input " + std::to_string(d));

  Tensor<S> alpha;
  Tensor<S> beta;
  if (site.dynamic) {
    Tensor<S> normed = site.norm_kind == HcNormKind::Rms
                           ? ops::rms_norm(tape, h)
                           : ops::layer_norm(tape, h, site.norm_gain);
    Tensor<S> flat = ops::reshape(tape, normed, {tokens * n, d});

    Tensor<S> a_lin = ops::matmul(tape, flat, site.w_alpha);  // (tokens*n, n+1)
    if (site.tanh_enabled) a_lin = ops::tanh(tape, a_lin);
    Tensor<S> a_dyn = ops::mul(tape, a_lin, site.s_alpha);
    alpha = ops::add(tape, ops::reshape(tape, a_dyn, {tokens, n, n + 1}), site.static_alpha);

    Tensor<S> b_lin = ops::matmul(tape, flat, site.w_beta);  // (tokens*n, 1)
    if (site.tanh_enabled) b_lin = ops::tanh(tape, b_lin);
    Tensor<S> b_dyn = ops::mul(tape, b_lin, site.s_beta);
    beta = ops::add(tape, ops::reshape(tape, b_dyn, {tokens, n}), site.static_beta);
  } else {
    alpha = site.static_alpha;
    beta = site.static_beta;
  }

  Tensor<S> mix = ops::bmm(tape, ops::transpose_last(tape, alpha), h);  // (tokens, n+1, d)
  WidthResult<S> out;
  out.layer_input = ops::reshape(tape, ops::slice(tape, mix, 1, 0, 1), {tokens, d});
  out.carried = ops::slice(tape, mix, 1, 1, n);
  out.beta = beta;
  return out;
}

template <class S>
Tensor<S> depth_connection(Tape<S>& tape, const WidthResult<S>& width,
                           const Tensor<S>& layer_out) {
  const std::int64_t tokens = width.carried.dim(0);
  const std::int64_t n = width.carried.dim(1);
  const std::int64_t d = width.carried.dim(2);
  if (layer_out.rank() != 2 || layer_out.dim(0) != tokens || layer_out.dim(1) != d)
    throw ShapeError("depth_connection: layer output shape " + shape_str(layer_out.shape()) +
                     " does not match carried rows " + shape_str(width.carried.shape()));
  Tensor<S> b3 = width.beta.rank() == 1
                     ? ops::reshape(tape, width.beta, {1, n, 1})
                     : ops::reshape(tape, width.beta, {tokens, n, 1});
  Tensor<S> o3 = ops::reshape(tape, layer_out, {tokens, 1, d});
  return ops::add(tape, ops::mul(tape, b3, o3), width.carried);
}

template <class S>
Tensor<S> hc_forward(Tape<S>& tape, const HcSite<S>& site, const LayerFn<S>& layer,
                     const Tensor<S>& h) {
  WidthResult<S> width = width_connection(tape, site, h);
  Tensor<S> u = layer(tape, width.layer_input);
  return depth_connection(tape, width, u);
}

template <class S>
SiteWeights static_weights(const HcSite<S>& site) {
  const std::int64_t n = site.n;
  SiteWeights w;
  w.beta.resize(static_cast<std::size_t>(n));
  w.alpha_m.resize(static_cast<std::size_t>(n));
  w.alpha_r = DMat(n, n);
  auto bv = site.static_beta.value();
  auto av = site.static_alpha.value();
  for (std::int64_t i = 0; i < n; ++i) {
    w.beta[static_cast<std::size_t>(i)] = static_cast<double>(bv[static_cast<std::size_t>(i)]);
    w.alpha_m[static_cast<std::size_t>(i)] =
        static_cast<double>(av[static_cast<std::size_t>(i * (n + 1))]);
    for (std::int64_t j = 0; j < n; ++j)
      w.alpha_r(i, j) = static_cast<double>(av[static_cast<std::size_t>(i * (n + 1) + 1 + j)]);
  }
  return w;
}

template <class S>
void dhc_coefficients(const HcSite<S>& site, const DMat& hyper_hidden, DVec& beta_out,
                      DMat& alpha_out) {
  if (!site.dynamic) throw ConfigError("dhc_coefficients: site is static");
  const std::int64_t n = site.n;
  const std::int64_t d = site.width;
  if (hyper_hidden.rows() != n || hyper_hidden.cols() != d)
    throw ShapeError("dhc_coefficients: hyper hidden must be n x d");

  // Mirrors the width-connection math on plain doubles.
  DMat normed(n, d);
  auto gain = site.norm_kind == HcNormKind::Layer ? site.norm_gain.value()
                                                  : std::span<const S>();
  for (std::int64_t i = 0; i < n; ++i) {
    if (site.norm_kind == HcNormKind::Rms) {
      double ms = 0.0;
      for (std::int64_t c = 0; c < d; ++c) ms += hyper_hidden(i, c) * hyper_hidden(i, c);
      ms /= static_cast<double>(d);
      const double ir = 1.0 / std::sqrt(ms + ops::kNormEps);
      for (std::int64_t c = 0; c < d; ++c) normed(i, c) = hyper_hidden(i, c) * ir;
    } else {
      double mean = 0.0;
      for (std::int64_t c = 0; c < d; ++c) mean += hyper_hidden(i, c);
      mean /= static_cast<double>(d);
      double var = 0.0;
      for (std::int64_t c = 0; c < d; ++c) {
        const double x = hyper_hidden(i, c) - mean;
        var += x * x;
      }
      var /= static_cast<double>(d);
      const double is = 1.0 / std::sqrt(var + ops::kNormEps);
      for (std::int64_t c = 0; c < d; ++c)
        normed(i, c) = (hyper_hidden(i, c) - mean) * is *
                       static_cast<double>(gain[static_cast<std::size_t>(c)]);
    }
  }

  const double sa = static_cast<double>(site.s_alpha.value()[0]);
  const double sb = static_cast<double>(site.s_beta.value()[0]);
  auto wa = site.w_alpha.value();
  auto wb = site.w_beta.value();
  const SiteWeights stat = static_weights(site);

  alpha_out = DMat(n, n + 1);
  beta_out.assign(static_cast<std::size_t>(n), 0.0);
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j <= n; ++j) {
      double acc = 0.0;
      for (std::int64_t c = 0; c < d; ++c)
        acc += normed(i, c) * static_cast<double>(wa[static_cast<std::size_t>(c * (n + 1) + j)]);
      if (site.tanh_enabled) acc = std::tanh(acc);
      const double stat_v = j == 0 ? stat.alpha_m[static_cast<std::size_t>(i)]
                                   : stat.alpha_r(i, j - 1);
      alpha_out(i, j) = sa * acc + stat_v;
    }
    double acc = 0.0;
    for (std::int64_t c = 0; c < d; ++c)
      acc += normed(i, c) * static_cast<double>(wb[static_cast<std::size_t>(c)]);
    if (site.tanh_enabled) acc = std::tanh(acc);
    beta_out[static_cast<std::size_t>(i)] =
        sb * acc + stat.beta[static_cast<std::size_t>(i)];
  }
}

namespace {

HCMatrix matrix_from_parts(const DVec& beta, const DMat& alpha) {
  const std::int64_t n = alpha.rows();
  HCMatrix hc{DMat(n + 1, n + 1)};
  for (std::int64_t j = 0; j < n; ++j) hc.m(0, j + 1) = beta[static_cast<std::size_t>(j)];
  for (std::int64_t i = 0; i < n; ++i) {
    hc.m(i + 1, 0) = alpha(i, 0);
    for (std::int64_t j = 0; j < n; ++j) hc.m(i + 1, j + 1) = alpha(i, j + 1);
  }
  return hc;
}

}  // namespace

template <class S>
HCMatrix assemble_matrix(const HcSite<S>& site) {
  if (site.dynamic)
    throw ConfigError("assemble_matrix: dynamic site needs the token's hyper hidden matrix");
  const SiteWeights w = static_weights(site);
  DMat alpha(site.n, site.n + 1);
  for (std::int64_t i = 0; i < site.n; ++i) {
    alpha(i, 0) = w.alpha_m[static_cast<std::size_t>(i)];
    for (std::int64_t j = 0; j < site.n; ++j) alpha(i, j + 1) = w.alpha_r(i, j);
  }
  return matrix_from_parts(w.beta, alpha);
}

template <class S>
HCMatrix assemble_matrix(const HcSite<S>& site, const DMat& hyper_hidden) {
  if (!site.dynamic) return assemble_matrix(site);
  DVec beta;
  DMat alpha;
  dhc_coefficients(site, hyper_hidden, beta, alpha);
  return matrix_from_parts(beta, alpha);
}

template <class S>
std::pair<DMat, DMat> decouple(const HcSite<S>& site) {
  const SiteWeights w = static_weights(site);
  const std::int64_t n = site.n;
  DMat dc(2, n);
  for (std::int64_t j = 0; j < n; ++j) {
    dc(0, j) = w.beta[static_cast<std::size_t>(j)];
    dc(1, j) = w.alpha_r(j, j);
  }
  DMat wc(n, n + 1);
  for (std::int64_t i = 0; i < n; ++i) {
    wc(i, 0) = w.alpha_m[static_cast<std::size_t>(i)];
    for (std::int64_t j = 0; j < n; ++j) wc(i, j + 1) = w.alpha_r(i, j);
  }
  return {dc, wc};
}

#define HC_INSTANTIATE_SITE(S)                                                            \
  template struct HcSite<S>;                                                              \
  template WidthResult<S> width_connection(Tape<S>&, const HcSite<S>&, const Tensor<S>&); \
  template Tensor<S> depth_connection(Tape<S>&, const WidthResult<S>&, const Tensor<S>&); \
  template Tensor<S> hc_forward(Tape<S>&, const HcSite<S>&, const LayerFn<S>&,            \
                                const Tensor<S>&);                                        \
  template SiteWeights static_weights(const HcSite<S>&);                                  \
  template void dhc_coefficients(const HcSite<S>&, const DMat&, DVec&, DMat&);            \
  template HCMatrix assemble_matrix(const HcSite<S>&);                                    \
  template HCMatrix assemble_matrix(const HcSite<S>&, const DMat&);                       \
  template std::pair<DMat, DMat> decouple(const HcSite<S>&);

HC_INSTANTIATE_SITE(float)
HC_INSTANTIATE_SITE(double)

#undef HC_INSTANTIATE_SITE

}  // namespace hc
