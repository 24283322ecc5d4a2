#include "hc/verify.hpp"

#include <cmath>
#include <sstream>

#include "hc/grad_check.hpp"
#include "hc/trainer.hpp"
#include "json.hpp"

namespace hc::verify {

namespace {

constexpr std::uint64_t kSeed = 20240915;

void add_check(SuiteReport& report, const std::string& name, bool pass,
               const std::string& detail) {
  report.checks.push_back({name, pass, detail});
}

std::string dev_str(double dev, double tol) {
  std::ostringstream os;
  os << "max dev " << dev << " vs tol " << tol;
  return os.str();
}

bool matrix_equals(const DMat& m, const std::vector<std::vector<double>>& rows) {
  if (m.rows() != static_cast<std::int64_t>(rows.size())) return false;
  for (std::int64_t r = 0; r < m.rows(); ++r) {
    if (m.cols() != static_cast<std::int64_t>(rows[static_cast<std::size_t>(r)].size()))
      return false;
    for (std::int64_t c = 0; c < m.cols(); ++c)
      if (m(r, c) != rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]) return false;
  }
  return true;
}

SiteWeights random_site(std::int64_t n, Rng& rng) {
  SiteWeights w;
  w.beta.resize(static_cast<std::size_t>(n));
  w.alpha_m.resize(static_cast<std::size_t>(n));
  w.alpha_r = DMat(n, n);
  for (auto& v : w.beta) v = rng.normal(0.0, 1.0);
  for (auto& v : w.alpha_m) v = rng.normal(0.0, 1.0);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < n; ++j) w.alpha_r(i, j) = rng.normal(0.0, 0.6);
  return w;
}

std::vector<SiteWeights> init_sites(std::int64_t count, std::int64_t n) {
  std::vector<SiteWeights> sites;
  for (std::int64_t k = 0; k < count; ++k)
    sites.push_back(static_weights(HcSite<double>::static_init(k, n)));
  return sites;
}

double max_abs_diff(const analysis::UnfoldedConnections& a,
                    const analysis::UnfoldedConnections& b) {
  double dev = a.c0.max_abs_diff(b.c0);
  for (std::size_t i = 0; i < a.ci.size(); ++i)
    dev = std::max(dev, a.ci[i].max_abs_diff(b.ci[i]));
  return dev;
}

}  // namespace

analysis::UnfoldedConnections unfold_tag_oracle(const std::vector<SiteWeights>& sites,
                                                std::int64_t n) {
  const std::int64_t S = static_cast<std::int64_t>(sites.size());
  // coeff(i, tag): weight of layer tag's output inside hyper row i.
  // Tag 0 is the embedding; the initial rows each hold one copy of it.
  DMat coeff(n, S + 1);
  for (std::int64_t i = 0; i < n; ++i) coeff(i, 0) = 1.0;

  analysis::UnfoldedConnections out;
  out.c0 = DMat(S + 2, S + 2);
  out.ci.assign(static_cast<std::size_t>(n), DMat(S + 2, S + 2));

  for (std::int64_t k = 1; k <= S; ++k) {
    const SiteWeights& w = sites[static_cast<std::size_t>(k - 1)];
    for (std::int64_t tag = 0; tag < k; ++tag) {
      double h0c = 0.0;
      for (std::int64_t i = 0; i < n; ++i)
        h0c += w.alpha_m[static_cast<std::size_t>(i)] * coeff(i, tag);
      out.c0(k, tag) = h0c;
    }
    DMat carried(n, S + 1);
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t tag = 0; tag < k; ++tag) {
        double acc = 0.0;
        for (std::int64_t j = 0; j < n; ++j) acc += w.alpha_r(j, i) * coeff(j, tag);
        carried(i, tag) = acc;
        out.ci[static_cast<std::size_t>(i)](k, tag) = acc;
      }
    coeff = carried;
    for (std::int64_t i = 0; i < n; ++i)
      coeff(i, k) += w.beta[static_cast<std::size_t>(i)];
  }
  for (std::int64_t tag = 0; tag <= S; ++tag) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) acc += coeff(i, tag);
    out.c0(S + 1, tag) = acc;
  }
  return out;
}

SuiteReport run_algebra(bool inject_fault) {
  SuiteReport report;
  report.suite = "algebra";

  {
    const HCMatrix pre = algebra::prenorm_matrix();
    const bool ok = matrix_equals(pre.m, {{0, 1}, {1, 1}}) && pre.n() == 1;
    add_check(report, "prenorm matrix values", ok, "expected ((0,1),(1,1)) with n = 1");
  }
  {
    const auto r = algebra::check_prenorm(200, 1e-12, kSeed);
    add_check(report, "prenorm wiring equals residual", r.pass, dev_str(r.max_abs_dev, r.tol));
  }
  {
    const HCMatrix post = algebra::postnorm_matrix({1.0, 1.0, 0.0});
    const double w = post.m(0, 1);
    const bool ok = std::abs(w - 1.0 / std::sqrt(2.0)) < 1e-15 && post.m(1, 0) == 1.0 &&
                    post.m(1, 1) == w && post.m(0, 0) == 0.0;
    add_check(report, "postnorm weight at unit stats", ok, "w must equal 1/sqrt(2)");
  }
  {
    bool threw = false;
    try {
      algebra::postnorm_matrix({1.0, 1.0, -1.0});
    } catch (const DomainError&) {
      threw = true;
    }
    add_check(report, "postnorm rejects zero radicand", threw, "sigma_io = -sigma_i*sigma_o");
  }
  for (std::int64_t d : {8, 64}) {
    const auto r = algebra::check_postnorm(1000, 1e-10, kSeed + static_cast<std::uint64_t>(d), d);
    add_check(report, "postnorm wiring equals layernorm residual (d=" + std::to_string(d) + ")",
              r.pass, dev_str(r.max_abs_dev, r.tol));
  }
  {
    const HCMatrix seq2 = algebra::sequential_matrix(2);
    add_check(report, "sequential matrix n=2 values",
              matrix_equals(seq2.m, {{0, 1, 1}, {1, 1, 0}, {0, 0, 1}}),
              "rows (0,1,1),(1,1,0),(0,0,1)");
    add_check(report, "sequential n=1 equals prenorm",
              algebra::sequential_matrix(1).m.max_abs_diff(algebra::prenorm_matrix().m) == 0.0,
              "degenerate case");
  }
  for (std::int64_t n : {1, 2, 3, 4}) {
    const auto r = algebra::check_sequential(n, 8, 100, 1e-12,
                                             kSeed + 100 + static_cast<std::uint64_t>(n));
    add_check(report, "sequential wiring n=" + std::to_string(n), r.pass,
              dev_str(r.max_abs_dev, r.tol));
  }
  {
    const auto mats = algebra::parallel_matrices(2);
    const bool ok = matrix_equals(mats[0].m, {{0, 1, 0}, {1, 1, 1}, {1, 1, 1}}) &&
                    matrix_equals(mats[1].m, {{0, 0, 1}, {0, 1, 0}, {1, 0, 1}});
    add_check(report, "parallel matrices n=2 values", ok, "odd/even group matrices");
    add_check(report, "parallel n=1 degenerate form",
              algebra::parallel_matrices(1)[0].m.max_abs_diff(algebra::prenorm_matrix().m) == 0.0,
              "single matrix equals the n=1 sequential case");
  }
  for (std::int64_t n : {1, 2, 3, 4}) {
    const std::int64_t groups = std::max<std::int64_t>(1, 8 / n);
    const auto r = algebra::check_parallel(n, groups, 100, 1e-12,
                                           kSeed + 200 + static_cast<std::uint64_t>(n));
    add_check(report, "parallel wiring n=" + std::to_string(n), r.pass,
              dev_str(r.max_abs_dev, r.tol));
  }
  if (inject_fault) {
    // Deliberately perturbed prenorm matrix: the equivalence must fail.
    HCMatrix bad = algebra::prenorm_matrix();
    bad.m(0, 1) += 1e-3;
    Rng rng(kSeed);
    const auto layer = algebra::random_test_layer(8, rng);
    double dev = 0.0;
    for (int t = 0; t < 10; ++t) {
      DVec x(8);
      for (auto& v : x) v = rng.normal();
      DMat h(1, 8);
      for (std::int64_t c = 0; c < 8; ++c) h(0, c) = x[static_cast<std::size_t>(c)];
      const DMat out = algebra::hc_apply(bad, layer, h);
      const DVec u = layer(x);
      for (std::int64_t c = 0; c < 8; ++c)
        dev = std::max(dev,
                       std::abs(out(0, c) - (u[static_cast<std::size_t>(c)] +
                                             x[static_cast<std::size_t>(c)])));
    }
    add_check(report, "negative control: perturbed prenorm matrix", dev <= 1e-12,
              dev_str(dev, 1e-12));
  }

  report.pass = true;
  for (const auto& c : report.checks) report.pass = report.pass && c.pass;
  return report;
}

namespace {

// Weighted-mean scalarizer keeps |f| near 1 so float32 finite differences
// stay out of cancellation noise.
template <class S>
Tensor<S> weighted_mean(Tape<S>& tape, const Tensor<S>& t, Rng& rng) {
  Tensor<S> w = Tensor<S>::zeros(t.shape());
  for (auto& v : w.value()) v = rng.uniform() < 0.5 ? S(-1) : S(1);
  Tensor<S> prod = ops::mul(tape, t, w);
  Tensor<S> flat = ops::reshape(tape, prod, {t.numel()});
  return ops::scale(tape, ops::sum_axis(tape, flat, 0), 1.0 / static_cast<double>(t.numel()));
}

// Float32 finite differences resolve roughly 1e-4 of absolute error, so the
// 32-bit checks use moderate input scales and a unit denominator floor;
// near-zero gradient entries are then compared absolutely at tol.
template <class S>
bool op_gradient_check(double step, double tol, double input_std, double floor,
                       std::string& detail) {
  Rng rng(kSeed + 7);
  Tensor<S> a = Tensor<S>::randn({5, 7}, rng, input_std, true);
  Tensor<S> b = Tensor<S>::randn({7, 3}, rng, input_std, true);
  Rng wrng(kSeed + 8);
  auto f = [&](Tape<S>& tape) {
    Rng local = wrng;
    return weighted_mean(tape, ops::matmul(tape, a, b), local);
  };
  const auto r = grad_check<S>(f, {{"a", a}, {"b", b}}, step, tol, floor);
  detail = "worst rel err " + std::to_string(r.worst_rel_err) + " (" + r.worst_param + ")";
  return r.pass;
}

}  // namespace

SuiteReport run_gradients(bool inject_fault) {
  SuiteReport report;
  report.suite = "gradients";

  {
    // f(theta) = sum theta^2 has gradient 2*theta; central differences are
    // exact for quadratics up to roundoff.
    Rng rng(kSeed + 1);
    Tensor<double> theta = Tensor<double>::randn({17}, rng, 1.0, true);
    auto f = [&](Tape<double>& tape) {
      Tensor<double> sq = ops::mul(tape, theta, theta);
      return ops::sum_axis(tape, sq, 0);
    };
    const auto r = grad_check<double>(f, {{"theta", theta}}, 1e-5, 1e-9);
    add_check(report, "quadratic objective is exact", r.pass,
              "worst rel err " + std::to_string(r.worst_rel_err));
  }
  {
    std::string detail;
    const bool ok32 = op_gradient_check<float>(1e-3, 1e-4, 0.5, 1.0, detail);
    add_check(report, "matmul gradient (f32)", ok32, detail);
    const bool ok64 = op_gradient_check<double>(1e-5, 1e-6, 1.0, 1e-3, detail);
    add_check(report, "matmul gradient (f64)", ok64, detail);
  }
  {
    // tanh'(x) = 1 - tanh(x)^2.
    Rng rng(kSeed + 9);
    Tensor<double> x = Tensor<double>::randn({64}, rng, 1.0, true);
    Tape<double> tape;
    Tensor<double> y = ops::tanh(tape, x);
    Tensor<double> total = ops::sum_axis(tape, y, 0);
    tape.backward(total);
    double dev = 0.0;
    for (std::int64_t i = 0; i < 64; ++i) {
      const double t = std::tanh(x.value()[static_cast<std::size_t>(i)]);
      dev = std::max(dev, std::abs(x.grad()[static_cast<std::size_t>(i)] - (1.0 - t * t)));
    }
    add_check(report, "tanh derivative identity", dev < 1e-12, dev_str(dev, 1e-12));
  }
  {
    Rng rng(kSeed + 10);
    Tensor<float> x = Tensor<float>::randn({4, 6}, rng, 0.5, true);
    Rng wrng(kSeed + 11);
    auto f = [&](Tape<float>& tape) {
      Rng local = wrng;
      return weighted_mean(tape, ops::tanh(tape, x), local);
    };
    const auto r = grad_check<float>(f, {{"x", x}}, 1e-3, 1e-4, 1.0);
    add_check(report, "tanh chain gradient (f32)", r.pass,
              "worst rel err " + std::to_string(r.worst_rel_err));
  }
  {
    Rng rng(kSeed + 12);
    Tensor<double> x = Tensor<double>::randn({3, 9}, rng, 1.0, true);
    Tensor<double> gain = Tensor<double>::randn({9}, rng, 0.5, true);
    Rng wrng(kSeed + 13);
    auto f = [&](Tape<double>& tape) {
      Rng local = wrng;
      Tensor<double> ln = ops::layer_norm(tape, x, gain);
      Tensor<double> rn = ops::rms_norm(tape, ln);
      return weighted_mean(tape, ops::gelu(tape, rn), local);
    };
    const auto r = grad_check<double>(f, {{"x", x}, {"gain", gain}}, 1e-5, 1e-6);
    add_check(report, "norm and gelu gradients (f64)", r.pass,
              "worst rel err " + std::to_string(r.worst_rel_err));
  }
  {
    Rng rng(kSeed + 14);
    Tensor<double> logits = Tensor<double>::randn({6, 11}, rng, 1.0, true);
    std::vector<std::int32_t> targets = {0, 3, 10, -1, 4, 7};
    auto f = [&](Tape<double>& tape) {
      return ops::softmax_cross_entropy(tape, logits, targets, -1);
    };
    const auto r = grad_check<double>(f, {{"logits", logits}}, 1e-5, 1e-6);
    add_check(report, "cross-entropy gradient (f64)", r.pass,
              "worst rel err " + std::to_string(r.worst_rel_err));
  }
  {
    // Width + depth connections of a dynamic site, with the layer itself a
    // trainable map.
    const std::int64_t n = 2, d = 8, tokens = 3;
    HcSite<double> site = HcSite<double>::dynamic_init(1, n, d, true, HcNormKind::Rms);
    Rng rng(kSeed + 15);
    for (auto& v : site.w_alpha.value()) v = rng.normal(0.0, 0.3);
    for (auto& v : site.w_beta.value()) v = rng.normal(0.0, 0.3);
    for (auto& v : site.static_alpha.value()) v += rng.normal(0.0, 0.2);
    for (auto& v : site.static_beta.value()) v += rng.normal(0.0, 0.2);
    Tensor<double> h = Tensor<double>::randn({tokens, n, d}, rng, 1.0, true);
    Tensor<double> w = Tensor<double>::randn({d, d}, rng, 0.4, true);
    Rng wrng(kSeed + 16);
    auto f = [&](Tape<double>& tape) {
      LayerFn<double> layer = [&](Tape<double>& tp, const Tensor<double>& x) {
        return ops::tanh(tp, ops::matmul(tp, x, w));
      };
      Rng local = wrng;
      return weighted_mean(tape, hc_forward(tape, site, layer, h), local);
    };
    const auto r = grad_check<double>(f,
                                      {{"h", h},
                                       {"w", w},
                                       {"static_beta", site.static_beta},
                                       {"static_alpha", site.static_alpha},
                                       {"w_alpha", site.w_alpha},
                                       {"w_beta", site.w_beta},
                                       {"s_alpha", site.s_alpha},
                                       {"s_beta", site.s_beta}},
                                      1e-5, 1e-6);
    add_check(report, "hyper-connection site gradient (f64)", r.pass,
              "worst rel err " + std::to_string(r.worst_rel_err) + " (" + r.worst_param + ")");
  }
  {
    // Small end-to-end model gradient; the full-size check lives in the
    // acceptance suite.
    ModelConfig cfg;
    cfg.layers = 1;
    cfg.d_model = 16;
    cfg.heads = 2;
    cfg.d_ffn = 32;
    cfg.vocab = 23;
    cfg.n = 2;
    cfg.variant = Variant::Dhc;
    cfg.seed = 99;
    Model<double> model(cfg);
    Rng rng(kSeed + 17);
    auto params = model.named_params();
    for (auto& [name, p] : params)
      for (auto& v : p.value()) v += rng.normal(0.0, 0.02);
    const std::vector<std::int32_t> ids = {1, 7, 3, 15, 22, 4};
    auto f = [&](Tape<double>& tape) { return model.loss(tape, ids, 1, 6); };
    const auto r = grad_check<double>(f, params, 1e-5, 1e-6);
    add_check(report, "one-block model gradient (f64)", r.pass,
              "worst rel err " + std::to_string(r.worst_rel_err) + " (" + r.worst_param + ")");
  }
  if (inject_fault) {
    // A wrong analytic gradient must be caught by the finite differences.
    Rng rng(kSeed + 18);
    const double x0 = rng.normal();
    const double analytic = 2.0 * x0 + 1e-2;  // off by the injected amount
    const double h = 1e-5;
    const double numeric = ((x0 + h) * (x0 + h) - (x0 - h) * (x0 - h)) / (2.0 * h);
    const double rel = std::abs(analytic - numeric) / std::max(std::abs(numeric), 1e-3);
    add_check(report, "negative control: biased analytic gradient", rel < 1e-6,
              "rel err " + std::to_string(rel));
  }

  report.pass = true;
  for (const auto& c : report.checks) report.pass = report.pass && c.pass;
  return report;
}

SuiteReport run_unfolding(bool inject_fault) {
  SuiteReport report;
  report.suite = "unfolding";

  {
    // Residual-equivalent init: every realized connection weight is 1, and
    // the sum-pool row carries one copy per hidden row.
    bool ok = true;
    std::string detail;
    for (std::int64_t n : {1, 2, 4}) {
      const std::int64_t S = 6;
      const auto unfolded = analysis::unfold(init_sites(S, n), n);
      for (std::int64_t k = 0; k <= S + 1 && ok; ++k)
        for (std::int64_t j = 0; j <= S + 1 && ok; ++j) {
          const double expected =
              j >= k ? 0.0 : (k == S + 1 ? static_cast<double>(n) : 1.0);
          if (unfolded.c0(k, j) != expected) {
            ok = false;
            detail = "c0(" + std::to_string(k) + "," + std::to_string(j) + ") = " +
                     std::to_string(unfolded.c0(k, j)) + ", expected " +
                     std::to_string(expected) + " at n = " + std::to_string(n);
          }
        }
    }
    add_check(report, "init stack: all-ones lower triangle, n-fold sum row", ok, detail);
  }
  {
    Rng rng(kSeed + 30);
    double dev = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      const std::int64_t n = 1 + static_cast<std::int64_t>(rng.uniform_index(4));
      const std::int64_t S = 1 + static_cast<std::int64_t>(rng.uniform_index(6));
      std::vector<SiteWeights> sites;
      for (std::int64_t k = 0; k < S; ++k) sites.push_back(random_site(n, rng));
      dev = std::max(dev, max_abs_diff(analysis::unfold(sites, n),
                                       unfold_tag_oracle(sites, n)));
    }
    add_check(report, "random stacks match the tag oracle", dev <= 1e-10, dev_str(dev, 1e-10));
  }
  {
    // Single site: empty matrix product, c0(1,0) is just the A_m sum.
    Rng rng(kSeed + 31);
    const auto site = random_site(3, rng);
    const auto unfolded = analysis::unfold({site}, 3);
    double expected = 0.0;
    for (double v : site.alpha_m) expected += v;
    const double dev = std::abs(unfolded.c0(1, 0) - expected);
    add_check(report, "single-site base case", dev < 1e-15, dev_str(dev, 1e-15));
  }
  if (inject_fault) {
    Rng rng(kSeed + 32);
    std::vector<SiteWeights> sites;
    for (int k = 0; k < 4; ++k) sites.push_back(random_site(2, rng));
    const auto oracle = unfold_tag_oracle(sites, 2);
    sites[1].alpha_r(0, 1) += 0.05;
    const double dev = max_abs_diff(analysis::unfold(sites, 2), oracle);
    add_check(report, "negative control: perturbed site weights", dev <= 1e-10,
              dev_str(dev, 1e-10));
  }

  report.pass = true;
  for (const auto& c : report.checks) report.pass = report.pass && c.pass;
  return report;
}

SuiteReport run_accounting(bool inject_fault) {
  SuiteReport report;
  report.suite = "accounting";

  {
    ModelConfig cfg;
    cfg.layers = 16;
    cfg.d_model = 2048;
    cfg.heads = 16;
    cfg.d_ffn = 8192;
    cfg.vocab = 50304;
    cfg.n = 4;
    cfg.variant = Variant::Shc;
    const auto rep = analysis::count_params(cfg);
    const std::int64_t expected = inject_fault ? 769 : 768;
    add_check(report,
              inject_fault ? "negative control: shc extra parameter count"
                           : "shc x4 extra parameter count",
              rep.hc_params == expected,
              "got " + std::to_string(rep.hc_params) + ", expected " + std::to_string(expected));
  }
  {
    ModelConfig cfg;
    cfg.layers = 16;
    cfg.d_model = 2048;
    cfg.heads = 16;
    cfg.d_ffn = 8192;
    cfg.vocab = 50304;
    cfg.n = 4;
    cfg.variant = Variant::Dhc;
    cfg.dhc_norm = HcNormKind::Rms;  // no norm parameters
    const auto rep = analysis::count_params(cfg);
    add_check(report, "dhc x4 extra parameter count", rep.hc_params == 394048,
              "got " + std::to_string(rep.hc_params));

    const auto flops = analysis::estimate_flops(cfg);
    const bool in_bracket =
        flops.flops_delta_rate >= 0.001 && flops.flops_delta_rate <= 0.003;
    add_check(report, "dhc x4 flops delta within [0.1%, 0.3%]", in_bracket,
              "delta rate " + std::to_string(flops.flops_delta_rate * 100.0) + "%");
  }
  {
    ModelConfig cfg;
    cfg.variant = Variant::Shc;
    cfg.n = 1;
    const auto rep = analysis::count_params(cfg);
    add_check(report, "shc n=1 has 3 parameters per site", rep.hc_params_per_site == 3,
              "got " + std::to_string(rep.hc_params_per_site));
  }
  {
    // Formula vs measured parameter tensors across a config grid.
    bool ok = true;
    std::string detail;
    for (Variant variant : {Variant::PreNorm, Variant::PostNorm, Variant::Shc, Variant::Dhc})
      for (std::int64_t n : {1, 2, 4})
        for (bool tied : {true, false})
          for (HcNormKind norm : {HcNormKind::Rms, HcNormKind::Layer}) {
            if (!ok) continue;
            ModelConfig cfg;
            cfg.layers = 2;
            cfg.d_model = 16;
            cfg.heads = 2;
            cfg.d_ffn = 24;
            cfg.vocab = 31;
            cfg.n = n;
            cfg.variant = variant;
            cfg.tie_embeddings = tied;
            cfg.dhc_norm = norm;
            Model<float> model(cfg);
            const auto rep = analysis::count_params(cfg);
            const std::int64_t measured = analysis::measured_param_count(model);
            if (rep.total_params != measured) {
              ok = false;
              detail = "variant " + variant_name(variant) + " n=" + std::to_string(n) +
                       (tied ? " tied" : " untied") + ": formula " +
                       std::to_string(rep.total_params) + " vs measured " +
                       std::to_string(measured);
            }
          }
    add_check(report, "formula equals measured parameter count", ok, detail);
  }
  {
    ModelConfig cfg;
    cfg.layers = 3;
    cfg.d_model = 64;
    cfg.heads = 4;
    cfg.d_ffn = 128;
    cfg.variant = Variant::Shc;
    cfg.n = 1;
    const auto rep = analysis::estimate_flops(cfg);
    const std::int64_t expected = 2 * cfg.d_model * 2 * 2 * cfg.layers;
    add_check(report, "shc n=1 width-mix flops", rep.width_mix_flops == expected,
              "got " + std::to_string(rep.width_mix_flops) + ", expected " +
                  std::to_string(expected));
  }
  {
    bool threw = false;
    try {
      ModelConfig cfg;
      cfg.variant = Variant::Shc;
      cfg.n = 0;
      analysis::estimate_flops(cfg);
    } catch (const ConfigError&) {
      threw = true;
    }
    add_check(report, "zero expansion rate rejected", threw, "n = 0 must be a config error");
  }
  {
    ModelConfig cfg;
    cfg.layers = 16;
    cfg.d_model = 2048;
    cfg.heads = 16;
    cfg.d_ffn = 8192;
    cfg.variant = Variant::PreNorm;
    const auto mem = analysis::estimate_activation_memory(cfg, 4, 2048);
    add_check(report, "residual baseline has no hyper activation term", mem.hc_slots == 0.0,
              "hc slots " + std::to_string(mem.hc_slots));
    cfg.variant = Variant::Dhc;
    cfg.n = 2;
    const auto mem2 = analysis::estimate_activation_memory(cfg, 4, 2048);
    cfg.n = 4;
    const auto mem4 = analysis::estimate_activation_memory(cfg, 4, 2048);
    add_check(report, "hyper activation term is linear in n",
              mem4.hc_slots == 2.0 * mem2.hc_slots, "2n doubling");
    add_check(report, "n=2 activation overhead under 15%", mem2.ratio < 0.15,
              "ratio " + std::to_string(mem2.ratio * 100.0) + "%");
  }

  report.pass = true;
  for (const auto& c : report.checks) report.pass = report.pass && c.pass;
  return report;
}

std::vector<SuiteReport> run_suites(const std::string& which, bool inject_fault) {
  std::vector<SuiteReport> reports;
  if (which == "algebra" || which == "all") reports.push_back(run_algebra(inject_fault));
  if (which == "gradients" || which == "all") reports.push_back(run_gradients(inject_fault));
  if (which == "unfolding" || which == "all") reports.push_back(run_unfolding(inject_fault));
  if (which == "accounting" || which == "all") reports.push_back(run_accounting(inject_fault));
  if (reports.empty())
    throw ConfigError("verify: unknown suite '" + which +
                      "' (expected algebra, gradients, unfolding, accounting, or all)");
  return reports;
}

bool all_pass(const std::vector<SuiteReport>& reports) {
  for (const auto& r : reports)
    if (!r.pass) return false;
  return true;
}

std::string reports_to_json(const std::vector<SuiteReport>& reports) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : reports) {
    nlohmann::json jr;
    jr["suite"] = r.suite;
    jr["pass"] = r.pass;
    jr["checks"] = nlohmann::json::array();
    for (const auto& c : r.checks) {
      nlohmann::json jc;
      jc["name"] = c.name;
      jc["pass"] = c.pass;
      jc["detail"] = c.detail;
      jr["checks"].push_back(jc);
    }
    out.push_back(jr);
  }
  return out.dump(2);
}

}  // namespace hc::verify
