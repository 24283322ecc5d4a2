#include <cmath>

#include "doctest.h"
#include "hc/algebra.hpp"

using namespace hc;
using namespace hc::algebra;

namespace {
constexpr std::uint64_t kSeed = 777;
}

TEST_CASE("prenorm matrix: exact entries and expansion rate 1") {
  const HCMatrix hc = prenorm_matrix();
  CHECK(hc.n() == 1);
  CHECK(hc.m(0, 0) == 0.0);
  CHECK(hc.m(0, 1) == 1.0);
  CHECK(hc.m(1, 0) == 1.0);
  CHECK(hc.m(1, 1) == 1.0);
}

TEST_CASE("prenorm wiring reproduces T(h) + h") {
  const auto r = check_prenorm(200, 1e-12, kSeed);
  CHECK_MESSAGE(r.pass, "max abs dev ", r.max_abs_dev);
}

TEST_CASE("postnorm matrix: unit statistics give 1/sqrt(2)") {
  const HCMatrix hc = postnorm_matrix({1.0, 1.0, 0.0});
  CHECK(hc.m(0, 1) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
  CHECK(hc.m(1, 1) == hc.m(0, 1));
  CHECK(hc.m(1, 0) == 1.0);
  CHECK(hc.m(0, 0) == 0.0);
}

TEST_CASE("postnorm matrix: zero radicand is a domain error") {
  // sigma_io = -sigma_i * sigma_o with equal sigmas makes the sum degenerate.
  CHECK_THROWS_AS(postnorm_matrix({2.0, 2.0, -4.0}), DomainError);
}

TEST_CASE("postnorm wiring reproduces layer-normalized residual") {
  for (std::int64_t d : {8, 64}) {
    const auto r = check_postnorm(1000, 1e-10, kSeed + static_cast<std::uint64_t>(d), d);
    CHECK_MESSAGE(r.pass, "d = ", d, ", max abs dev ", r.max_abs_dev);
  }
}

TEST_CASE("residual variance identity holds with population moments") {
  // sigma_{h+h'}^2 = sigma_h^2 + sigma_h'^2 + 2 sigma_hh'.
  Rng rng(kSeed + 5);
  const std::int64_t d = 48;
  for (int trial = 0; trial < 200; ++trial) {
    DVec h(d), g(d);
    for (auto& v : h) v = rng.normal();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = 0.3 * h[i] + rng.normal();
    auto moments = [&](const DVec& v) {
      double mean = 0.0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(d);
      double var = 0.0;
      for (double x : v) var += (x - mean) * (x - mean);
      return std::pair{mean, var / static_cast<double>(d)};
    };
    const auto [mh, vh] = moments(h);
    const auto [mg, vg] = moments(g);
    double cov = 0.0;
    for (std::int64_t i = 0; i < d; ++i)
      cov += (h[static_cast<std::size_t>(i)] - mh) * (g[static_cast<std::size_t>(i)] - mg);
    cov /= static_cast<double>(d);
    DVec sum(static_cast<std::size_t>(d));
    for (std::int64_t i = 0; i < d; ++i)
      sum[static_cast<std::size_t>(i)] =
          h[static_cast<std::size_t>(i)] + g[static_cast<std::size_t>(i)];
    const auto [ms, vs] = moments(sum);
    CHECK(std::abs(std::sqrt(vs) - std::sqrt(vh + vg + 2.0 * cov)) < 1e-10);
  }
}

TEST_CASE("sequential matrix: n=2 layout and the n=1 degenerate case") {
  const HCMatrix seq = sequential_matrix(2);
  const double expected[3][3] = {{0, 1, 1}, {1, 1, 0}, {0, 0, 1}};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) CHECK(seq.m(r, c) == expected[r][c]);
  CHECK(sequential_matrix(1).m.max_abs_diff(prenorm_matrix().m) == 0.0);
  CHECK_THROWS_AS(sequential_matrix(0), ConfigError);
}

TEST_CASE("sequential wiring: rows stay equal and follow the residual chain") {
  for (std::int64_t n : {1, 2, 3, 4}) {
    const auto r = check_sequential(n, 8, 50, 1e-12, kSeed + static_cast<std::uint64_t>(n));
    CHECK_MESSAGE(r.pass, "n = ", n, ", max abs dev ", r.max_abs_dev);
  }
}

TEST_CASE("parallel matrices: n=2 odd/even layout") {
  const auto mats = parallel_matrices(2);
  REQUIRE(mats.size() == 2);
  const double odd[3][3] = {{0, 1, 0}, {1, 1, 1}, {1, 1, 1}};
  const double even[3][3] = {{0, 0, 1}, {0, 1, 0}, {1, 0, 1}};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      CHECK(mats[0].m(r, c) == odd[r][c]);
      CHECK(mats[1].m(r, c) == even[r][c]);
    }
  CHECK(parallel_matrices(1)[0].m.max_abs_diff(sequential_matrix(1).m) == 0.0);
}

TEST_CASE("parallel wiring reproduces the group-parallel composition") {
  for (std::int64_t n : {1, 2, 3, 4}) {
    const std::int64_t groups = std::max<std::int64_t>(1, 8 / n);
    const auto r =
        check_parallel(n, groups, 50, 1e-12, kSeed + 40 + static_cast<std::uint64_t>(n));
    CHECK_MESSAGE(r.pass, "n = ", n, ", max abs dev ", r.max_abs_dev);
  }
}

TEST_CASE("verify_equivalence: pass, fail, and shape mismatch") {
  Rng rng(kSeed + 60);
  const std::int64_t d = 12;
  const VecMap layer = random_test_layer(d, rng);

  const HCMatrix pre = prenorm_matrix();
  const VecMap via_hc = [&](const DVec& x) {
    DMat h(1, d);
    for (std::int64_t c = 0; c < d; ++c) h(0, c) = x[static_cast<std::size_t>(c)];
    return hc_apply(pre, layer, h).row(0);
  };
  const VecMap residual = [&](const DVec& x) {
    DVec y = layer(x);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += x[i];
    return y;
  };
  const auto ok = verify_equivalence(via_hc, residual, d, 100, 1e-12, kSeed + 61);
  CHECK(ok.pass);
  CHECK(ok.max_abs_dev <= 1e-12);

  // A deliberately perturbed matrix must report a failing verdict.
  HCMatrix bad = prenorm_matrix();
  bad.m(0, 1) = 1.0 + 1e-3;
  const VecMap via_bad = [&, bad](const DVec& x) {
    DMat h(1, d);
    for (std::int64_t c = 0; c < d; ++c) h(0, c) = x[static_cast<std::size_t>(c)];
    return hc_apply(bad, layer, h).row(0);
  };
  const auto fail = verify_equivalence(via_bad, residual, d, 100, 1e-12, kSeed + 62);
  CHECK_FALSE(fail.pass);
  CHECK(fail.max_abs_dev > 1e-12);

  const VecMap wrong_shape = [&](const DVec& x) { return DVec(x.size() + 1, 0.0); };
  CHECK_THROWS_AS(verify_equivalence(via_hc, wrong_shape, d, 3, 1e-12, kSeed + 63),
                  ConfigError);
}

TEST_CASE("hc_apply rejects mismatched hyper hidden rows") {
  Rng rng(kSeed + 70);
  const VecMap layer = random_test_layer(4, rng);
  DMat h(3, 4);
  CHECK_THROWS_AS(hc_apply(prenorm_matrix(), layer, h), ShapeError);
}
