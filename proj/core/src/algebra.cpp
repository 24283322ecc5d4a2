#include "hc/algebra.hpp"

#include <cmath>
#include <memory>
#include <string>

namespace hc {

DVec HCMatrix::beta() const {
  DVec b(static_cast<std::size_t>(n()));
  for (std::int64_t j = 0; j < n(); ++j) b[static_cast<std::size_t>(j)] = m(0, j + 1);
  return b;
}

DVec HCMatrix::alpha_m() const {
  DVec a(static_cast<std::size_t>(n()));
  for (std::int64_t i = 0; i < n(); ++i) a[static_cast<std::size_t>(i)] = m(i + 1, 0);
  return a;
}

DMat HCMatrix::alpha_r() const {
  DMat a(n(), n());
  for (std::int64_t i = 0; i < n(); ++i)
    for (std::int64_t j = 0; j < n(); ++j) a(i, j) = m(i + 1, j + 1);
  return a;
}

namespace algebra {

namespace {

double pop_std(const DVec& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return std::sqrt(var / static_cast<double>(v.size()));
}

DVec sample_normal(std::int64_t d, Rng& rng) {
  DVec x(static_cast<std::size_t>(d));
  for (auto& v : x) v = rng.normal();
  return x;
}

void recenter(DVec& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  for (auto& x : v) x -= mean;
}

}  // namespace

HCMatrix prenorm_matrix() {
  HCMatrix hc{DMat(2, 2)};
  hc.m(0, 1) = 1.0;
  hc.m(1, 0) = 1.0;
  hc.m(1, 1) = 1.0;
  return hc;
}

HCMatrix postnorm_matrix(const ResidualStats& stats) {
  const double radicand =
      stats.sigma_i * stats.sigma_i + stats.sigma_o * stats.sigma_o + 2.0 * stats.sigma_io;
  if (radicand <= 0.0)
    throw DomainError("postnorm_matrix: non-positive radicand " + std::to_string(radicand));
  const double w = 1.0 / std::sqrt(radicand);
  HCMatrix hc{DMat(2, 2)};
  hc.m(0, 1) = w;
  hc.m(1, 0) = 1.0;
  hc.m(1, 1) = w;
  return hc;
}

HCMatrix sequential_matrix(std::int64_t n) {
  if (n < 1) throw ConfigError("sequential_matrix: n must be >= 1");
  HCMatrix hc{DMat(n + 1, n + 1)};
  for (std::int64_t j = 1; j <= n; ++j) hc.m(0, j) = 1.0;
  hc.m(1, 0) = 1.0;
  for (std::int64_t i = 1; i <= n; ++i) hc.m(i, i) = 1.0;
  return hc;
}

std::vector<HCMatrix> parallel_matrices(std::int64_t n) {
  if (n < 1) throw ConfigError("parallel_matrices: n must be >= 1");
  std::vector<HCMatrix> out;
  out.reserve(static_cast<std::size_t>(n));
  {
    // First position: the layer reads the previous group's sum, and the sum
    // is spread to every hidden row.
    HCMatrix hc{DMat(n + 1, n + 1)};
    hc.m(0, 1) = 1.0;
    for (std::int64_t i = 1; i <= n; ++i)
      for (std::int64_t j = 0; j <= n; ++j) hc.m(i, j) = 1.0;
    out.push_back(std::move(hc));
  }
  for (std::int64_t p = 1; p < n; ++p) {
    // Position p reads hidden row p and writes its residual sum back to it.
    HCMatrix hc{DMat(n + 1, n + 1)};
    hc.m(0, p + 1) = 1.0;
    hc.m(p + 1, 0) = 1.0;
    for (std::int64_t i = 1; i <= n; ++i) hc.m(i, i) = 1.0;
    out.push_back(std::move(hc));
  }
  return out;
}

DMat hc_apply(const HCMatrix& hc, const VecMap& layer, const DMat& hyper_hidden) {
  const std::int64_t n = hc.n();
  const std::int64_t d = hyper_hidden.cols();
  if (hyper_hidden.rows() != n)
    throw ShapeError("hc_apply: hyper hidden rows " + std::to_string(hyper_hidden.rows()) +
                     " do not match matrix n " + std::to_string(n));
  const DVec am = hc.alpha_m();
  const DVec b = hc.beta();
  const DMat ar = hc.alpha_r();

  DVec h0(static_cast<std::size_t>(d), 0.0);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t c = 0; c < d; ++c)
      h0[static_cast<std::size_t>(c)] += am[static_cast<std::size_t>(i)] * hyper_hidden(i, c);

  const DVec u = layer(h0);
  if (static_cast<std::int64_t>(u.size()) != d)
    throw ShapeError("hc_apply: layer changed the width");

  DMat out(n, d);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t c = 0; c < d; ++c) {
      double acc = b[static_cast<std::size_t>(i)] * u[static_cast<std::size_t>(c)];
      for (std::int64_t j = 0; j < n; ++j) acc += ar(j, i) * hyper_hidden(j, c);
      out(i, c) = acc;
    }
  return out;
}

EquivalenceReport verify_equivalence(const VecMap& a, const VecMap& b, std::int64_t dim,
                                     int trials, double tol, std::uint64_t seed) {
  Rng rng(seed);
  EquivalenceReport report;
  report.trials = trials;
  report.tol = tol;
  for (int t = 0; t < trials; ++t) {
    const DVec x = sample_normal(dim, rng);
    const DVec ya = a(x);
    const DVec yb = b(x);
    if (ya.size() != yb.size())
      throw ConfigError("verify_equivalence: builders disagree on output size, " +
                        std::to_string(ya.size()) + " vs " + std::to_string(yb.size()));
    for (std::size_t i = 0; i < ya.size(); ++i)
      report.max_abs_dev = std::max(report.max_abs_dev, std::abs(ya[i] - yb[i]));
  }
  report.pass = report.max_abs_dev <= tol;
  return report;
}

VecMap random_test_layer(std::int64_t d, Rng& rng) {
  auto w = std::make_shared<DMat>(d, d);
  auto bias = std::make_shared<DVec>(static_cast<std::size_t>(d));
  const double scale = 0.8 / std::sqrt(static_cast<double>(d));
  for (std::int64_t r = 0; r < d; ++r)
    for (std::int64_t c = 0; c < d; ++c) (*w)(r, c) = rng.normal(0.0, scale);
  for (auto& v : *bias) v = rng.normal(0.0, 0.5);
  return [w, bias, d](const DVec& x) {
    DVec y(static_cast<std::size_t>(d));
    for (std::int64_t r = 0; r < d; ++r) {
      double acc = (*bias)[static_cast<std::size_t>(r)];
      for (std::int64_t c = 0; c < d; ++c) acc += (*w)(r, c) * x[static_cast<std::size_t>(c)];
      y[static_cast<std::size_t>(r)] = std::tanh(acc);
    }
    return y;
  };
}

VecMap random_centered_layer(std::int64_t d, Rng& rng) {
  VecMap inner = random_test_layer(d, rng);
  return [inner](const DVec& x) {
    DVec y = inner(x);
    recenter(y);
    return y;
  };
}

EquivalenceReport check_prenorm(int trials, double tol, std::uint64_t seed, std::int64_t d) {
  Rng rng(seed);
  EquivalenceReport report;
  report.trials = trials;
  report.tol = tol;
  const HCMatrix hc = prenorm_matrix();
  for (int t = 0; t < trials; ++t) {
    const VecMap layer = random_test_layer(d, rng);
    const DVec x = sample_normal(d, rng);
    DMat h(1, d);
    for (std::int64_t c = 0; c < d; ++c) h(0, c) = x[static_cast<std::size_t>(c)];
    const DMat out = hc_apply(hc, layer, h);
    const DVec u = layer(x);
    for (std::int64_t c = 0; c < d; ++c) {
      const double ref = u[static_cast<std::size_t>(c)] + x[static_cast<std::size_t>(c)];
      report.max_abs_dev = std::max(report.max_abs_dev, std::abs(out(0, c) - ref));
    }
  }
  report.pass = report.max_abs_dev <= tol;
  return report;
}

EquivalenceReport check_postnorm(int trials, double tol, std::uint64_t seed, std::int64_t d) {
  Rng rng(seed);
  EquivalenceReport report;
  report.trials = trials;
  report.tol = tol;
  for (int t = 0; t < trials; ++t) {
    // The chain invariant behind the proof: the incoming hidden state is the
    // output of a LayerNorm, hence zero-mean, and re-centering is folded
    // into the layer so its output is zero-mean too.
    DVec x = sample_normal(d, rng);
    recenter(x);
    const VecMap layer = random_centered_layer(d, rng);
    const DVec u = layer(x);

    DVec sum(static_cast<std::size_t>(d));
    for (std::int64_t c = 0; c < d; ++c)
      sum[static_cast<std::size_t>(c)] =
          x[static_cast<std::size_t>(c)] + u[static_cast<std::size_t>(c)];

    ResidualStats stats;
    stats.sigma_i = pop_std(x);
    stats.sigma_o = pop_std(u);
    double cov = 0.0;
    for (std::int64_t c = 0; c < d; ++c)
      cov += x[static_cast<std::size_t>(c)] * u[static_cast<std::size_t>(c)];
    stats.sigma_io = cov / static_cast<double>(d);

    const HCMatrix hc = postnorm_matrix(stats);
    DMat h(1, d);
    for (std::int64_t c = 0; c < d; ++c) h(0, c) = x[static_cast<std::size_t>(c)];
    const DMat out = hc_apply(hc, layer, h);

    // Exact LayerNorm (population std, no epsilon).
    double mean = 0.0;
    for (double v : sum) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : sum) var += (v - mean) * (v - mean);
    const double s = std::sqrt(var / static_cast<double>(d));
    for (std::int64_t c = 0; c < d; ++c) {
      const double ref = (sum[static_cast<std::size_t>(c)] - mean) / s;
      report.max_abs_dev = std::max(report.max_abs_dev, std::abs(out(0, c) - ref));
    }
  }
  report.pass = report.max_abs_dev <= tol;
  return report;
}

EquivalenceReport check_sequential(std::int64_t n, std::int64_t layers, int trials, double tol,
                                   std::uint64_t seed, std::int64_t d) {
  Rng rng(seed);
  EquivalenceReport report;
  report.trials = trials;
  report.tol = tol;
  const HCMatrix hc = sequential_matrix(n);
  for (int t = 0; t < trials; ++t) {
    std::vector<VecMap> maps;
    maps.reserve(static_cast<std::size_t>(layers));
    for (std::int64_t k = 0; k < layers; ++k) maps.push_back(random_test_layer(d, rng));

    const DVec x = sample_normal(d, rng);
    DMat h(n, d);
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t c = 0; c < d; ++c) h(i, c) = x[static_cast<std::size_t>(c)];

    DVec chain = x;
    for (std::int64_t k = 0; k < layers; ++k) {
      h = hc_apply(hc, maps[static_cast<std::size_t>(k)], h);
      const DVec u = maps[static_cast<std::size_t>(k)](chain);
      for (std::int64_t c = 0; c < d; ++c) chain[static_cast<std::size_t>(c)] += u[static_cast<std::size_t>(c)];

      // All rows must stay pairwise equal at every depth.
      for (std::int64_t i = 1; i < n; ++i)
        for (std::int64_t c = 0; c < d; ++c)
          report.max_abs_dev = std::max(report.max_abs_dev, std::abs(h(i, c) - h(0, c)));
      for (std::int64_t c = 0; c < d; ++c)
        report.max_abs_dev =
            std::max(report.max_abs_dev, std::abs(h(0, c) - chain[static_cast<std::size_t>(c)]));
    }
  }
  report.pass = report.max_abs_dev <= tol;
  return report;
}

EquivalenceReport check_parallel(std::int64_t n, std::int64_t groups, int trials, double tol,
                                 std::uint64_t seed, std::int64_t d) {
  Rng rng(seed);
  EquivalenceReport report;
  report.trials = trials;
  report.tol = tol;
  const std::vector<HCMatrix> mats = parallel_matrices(n);
  for (int t = 0; t < trials; ++t) {
    std::vector<VecMap> maps;
    maps.reserve(static_cast<std::size_t>(groups * n));
    for (std::int64_t k = 0; k < groups * n; ++k) maps.push_back(random_test_layer(d, rng));

    const DVec x = sample_normal(d, rng);
    // Rows must sum to the group input; the first matrix in a group only
    // ever reads that sum.
    DMat h(n, d);
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t c = 0; c < d; ++c)
        h(i, c) = x[static_cast<std::size_t>(c)] / static_cast<double>(n);

    DVec ref = x;
    for (std::int64_t g = 0; g < groups; ++g) {
      for (std::int64_t p = 0; p < n; ++p)
        h = hc_apply(mats[static_cast<std::size_t>(p)], maps[static_cast<std::size_t>(g * n + p)],
                     h);

      DVec next(static_cast<std::size_t>(d), 0.0);
      for (std::int64_t i = 0; i < n; ++i) {
        const DVec u = maps[static_cast<std::size_t>(g * n + i)](ref);
        for (std::int64_t c = 0; c < d; ++c)
          next[static_cast<std::size_t>(c)] +=
              u[static_cast<std::size_t>(c)] + ref[static_cast<std::size_t>(c)];
      }
      ref = next;

      DVec row_sum(static_cast<std::size_t>(d), 0.0);
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t c = 0; c < d; ++c) row_sum[static_cast<std::size_t>(c)] += h(i, c);
      for (std::int64_t c = 0; c < d; ++c)
        report.max_abs_dev = std::max(
            report.max_abs_dev,
            std::abs(row_sum[static_cast<std::size_t>(c)] - ref[static_cast<std::size_t>(c)]));
    }
  }
  report.pass = report.max_abs_dev <= tol;
  return report;
}

}  // namespace algebra
}  // namespace hc
