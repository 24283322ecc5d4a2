#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "hc/rng.hpp"
#include "hc/smallmat.hpp"

namespace hc {

// The (n+1)x(n+1) assembled connection matrix: entry (0,0) is 0, the top
// row is B, the first column is A_m, the lower-right n x n block is A_r.
struct HCMatrix {
  DMat m;

  std::int64_t n() const { return m.rows() - 1; }
  DVec beta() const;     // top row, columns 1..n
  DVec alpha_m() const;  // first column, rows 1..n
  DMat alpha_r() const;  // lower-right n x n block
};

namespace algebra {

// Per-token standard deviations and covariance of a layer's input and output.
struct ResidualStats {
  double sigma_i = 0.0;
  double sigma_o = 0.0;
  double sigma_io = 0.0;
};

using VecMap = std::function<DVec(const DVec&)>;

struct EquivalenceReport {
  int trials = 0;
  double max_abs_dev = 0.0;
  double tol = 0.0;
  bool pass = false;
};

// Fixed 2x2 matrix realizing h -> T(h) + h.
HCMatrix prenorm_matrix();

// 2x2 matrix realizing post-norm for the given statistics:
// w = 1 / sqrt(sigma_i^2 + sigma_o^2 + 2 sigma_io). Throws DomainError
// when the radicand is not positive.
HCMatrix postnorm_matrix(const ResidualStats& stats);

// [0, 1_{1xn}; e_0, I_n]: n rows evolve as one residual chain.
HCMatrix sequential_matrix(std::int64_t n);

// One matrix per position in a group of n parallel layers.
std::vector<HCMatrix> parallel_matrices(std::int64_t n);

// Runs both maps on `trials` random inputs of dimension `dim` and reports
// the max absolute deviation; throws ConfigError if output sizes differ.
EquivalenceReport verify_equivalence(const VecMap& a, const VecMap& b, std::int64_t dim,
                                     int trials, double tol, std::uint64_t seed);

// One hyper-connection step over plain doubles:
// Hhat = B^T T(H^T A_m)^T + A_r^T H, with H holding n rows of width d.
DMat hc_apply(const HCMatrix& hc, const VecMap& layer, const DMat& hyper_hidden);

// Bounded random affine map followed by tanh; fixed once constructed.
VecMap random_test_layer(std::int64_t d, Rng& rng);
// Same, but with the output re-centered to zero mean (post-norm proofs).
VecMap random_centered_layer(std::int64_t d, Rng& rng);

// ---- equivalence suites: each fixed wiring vs its explicit composition ----

// h -> T(h) + h vs the prenorm_matrix() wiring.
EquivalenceReport check_prenorm(int trials, double tol, std::uint64_t seed, std::int64_t d = 16);

// LayerNorm(h + T(h)) with folded re-centering vs the postnorm_matrix()
// wiring, using empirical sigma from each (h, T(h)) pair.
EquivalenceReport check_postnorm(int trials, double tol, std::uint64_t seed, std::int64_t d = 16);

// Sequential wiring vs an L-layer residual chain; also checks that all n
// rows stay pairwise equal at every depth.
EquivalenceReport check_sequential(std::int64_t n, std::int64_t layers, int trials, double tol,
                                   std::uint64_t seed, std::int64_t d = 16);

// Parallel wiring vs explicit group-parallel composition over `groups`
// groups of n layers each.
EquivalenceReport check_parallel(std::int64_t n, std::int64_t groups, int trials, double tol,
                                 std::uint64_t seed, std::int64_t d = 16);

}  // namespace algebra
}  // namespace hc
