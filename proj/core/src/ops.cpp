#include "hc/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace hc::ops {

namespace {

template <class S>
using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MapM = Eigen::Map<EMat<S>>;
template <class S>
using CMapM = Eigen::Map<const EMat<S>>;

template <class S>
Tensor<S> make_out(Shape shape, bool requires_grad) {
  // Every op writes each output element exactly once, so the value buffer
  // can start uninitialized; grads start zeroed for accumulation.
  return Tensor<S>::uninitialized(std::move(shape), requires_grad);
}

// Row-major strides of `in` aligned to the rank of `out`; 0 on broadcast dims.
std::vector<std::int64_t> bcast_strides(const Shape& in, const Shape& out) {
  const std::size_t ri = in.size(), ro = out.size();
  std::vector<std::int64_t> in_str(ri);
  std::int64_t s = 1;
  for (std::size_t d = ri; d-- > 0;) {
    in_str[d] = s;
    s *= in[d];
  }
  std::vector<std::int64_t> strides(ro, 0);
  for (std::size_t d = 0; d < ri; ++d) {
    const std::size_t od = ro - ri + d;
    strides[od] = (in[d] == 1 && out[od] != 1) ? 0 : in_str[d];
  }
  return strides;
}

// Walks the output index space once, tracking both input offsets. The
// innermost dimension runs in a tight loop; element order is unchanged.
template <class F>
void for_each_bcast(const Shape& out, const std::vector<std::int64_t>& sa,
                    const std::vector<std::int64_t>& sb, F&& f) {
  const std::int64_t total = shape_numel(out);
  const std::size_t r = out.size();
  const std::int64_t inner = out[r - 1];
  const std::int64_t sa_in = sa[r - 1];
  const std::int64_t sb_in = sb[r - 1];
  const std::int64_t outer = inner > 0 ? total / inner : 0;
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t offa = 0, offb = 0;
  std::int64_t i = 0;
  for (std::int64_t o = 0; o < outer; ++o) {
    std::int64_t ia = offa, ib = offb;
    for (std::int64_t k = 0; k < inner; ++k) {
      f(i++, ia, ib);
      ia += sa_in;
      ib += sb_in;
    }
    for (std::size_t d = r - 1; d-- > 0;) {
      ++idx[d];
      offa += sa[d];
      offb += sb[d];
      if (idx[d] < out[d]) break;
      offa -= sa[d] * out[d];
      offb -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

std::int64_t axis_check(const Shape& shape, std::int64_t axis, const char* op) {
  if (axis < 0 || axis >= static_cast<std::int64_t>(shape.size()))
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(shape));
  return axis;
}

// Below this many multiply-accumulates per slice, plain loops beat the
// library call overhead. Routing depends only on the shape, so repeated
// runs stay bit-identical.
constexpr std::int64_t kMicroGemmFlops = 16384;

// C (m,n) = or += A (m,k) @ B (k,n); row-major contiguous.
template <class S, bool Accumulate = true>
inline void micro_gemm_acc(const S* a, const S* b, S* c, std::int64_t m, std::int64_t k,
                           std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    S* crow = c + i * n;
    if constexpr (!Accumulate) std::fill(crow, crow + n, S(0));
    for (std::int64_t l = 0; l < k; ++l) {
      const S av = a[i * k + l];
      const S* brow = b + l * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C (m,n) = or += A (m,k) @ B (n,k)^T.
template <class S, bool Accumulate = true>
inline void micro_gemm_nt_acc(const S* a, const S* b, S* c, std::int64_t m, std::int64_t k,
                              std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const S* arow = a + i * k;
    S* crow = c + i * n;
    for (std::int64_t j = 0; j < n; ++j) {
      const S* brow = b + j * k;
      S acc = 0;
      for (std::int64_t l = 0; l < k; ++l) acc += arow[l] * brow[l];
      if constexpr (Accumulate)
        crow[j] += acc;
      else
        crow[j] = acc;
    }
  }
}

// C (k,n) += A (m,k)^T @ G (m,n).
template <class S>
inline void micro_gemm_tn_acc(const S* a, const S* g, S* c, std::int64_t m, std::int64_t k,
                              std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const S* arow = a + i * k;
    const S* grow = g + i * n;
    for (std::int64_t l = 0; l < k; ++l) {
      const S av = arow[l];
      S* crow = c + l * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

template <class S>
struct MatDims {
  std::int64_t m, k, n;
};

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1)
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

// ---- elementwise -----------------------------------------------------------

namespace {

enum class BinKind { Add, Sub, Mul };

template <class S>
Tensor<S> binary_elementwise(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b,
                             BinKind kind) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const bool rg = a.requires_grad() || b.requires_grad();
  Tensor<S> out = make_out<S>(out_shape, rg);

  const auto sa = bcast_strides(a.shape(), out_shape);
  const auto sb = bcast_strides(b.shape(), out_shape);
  auto* av = a.value().data();
  auto* bv = b.value().data();
  auto* ov = out.value().data();

  const bool same = a.shape() == b.shape();
  if (same) {
    const std::int64_t n = out.numel();
    switch (kind) {
      case BinKind::Add:
        for (std::int64_t i = 0; i < n; ++i) ov[i] = av[i] + bv[i];
        break;
      case BinKind::Sub:
        for (std::int64_t i = 0; i < n; ++i) ov[i] = av[i] - bv[i];
        break;
      case BinKind::Mul:
        for (std::int64_t i = 0; i < n; ++i) ov[i] = av[i] * bv[i];
        break;
    }
  } else {
    switch (kind) {
      case BinKind::Add:
        for_each_bcast(out_shape, sa, sb,
                       [&](std::int64_t i, std::int64_t oa, std::int64_t ob) {
                         ov[i] = av[oa] + bv[ob];
                       });
        break;
      case BinKind::Sub:
        for_each_bcast(out_shape, sa, sb,
                       [&](std::int64_t i, std::int64_t oa, std::int64_t ob) {
                         ov[i] = av[oa] - bv[ob];
                       });
        break;
      case BinKind::Mul:
        for_each_bcast(out_shape, sa, sb,
                       [&](std::int64_t i, std::int64_t oa, std::int64_t ob) {
                         ov[i] = av[oa] * bv[ob];
                       });
        break;
    }
  }

  if (rg) {
    auto ai = a.impl();
    auto bi = b.impl();
    auto oi = out.impl();
    tape.record([ai, bi, oi, sa, sb, out_shape, kind]() {
      const S* gy = oi->grad.data();
      S* ga = ai->requires_grad ? ai->grad.data() : nullptr;
      S* gb = bi->requires_grad ? bi->grad.data() : nullptr;
      const S* av = ai->value.data();
      const S* bv = bi->value.data();
      for_each_bcast(out_shape, sa, sb,
                     [&](std::int64_t i, std::int64_t oa, std::int64_t ob) {
                       switch (kind) {
                         case BinKind::Add:
                           if (ga) ga[oa] += gy[i];
                           if (gb) gb[ob] += gy[i];
                           break;
                         case BinKind::Sub:
                           if (ga) ga[oa] += gy[i];
                           if (gb) gb[ob] -= gy[i];
                           break;
                         case BinKind::Mul:
                           if (ga) ga[oa] += gy[i] * bv[ob];
                           if (gb) gb[ob] += gy[i] * av[oa];
                           break;
                       }
                     });
    });
  }
  return out;
}

}  // namespace

template <class S>
Tensor<S> add(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
  return binary_elementwise(tape, a, b, BinKind::Add);
}
template <class S>
Tensor<S> sub(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
  return binary_elementwise(tape, a, b, BinKind::Sub);
}
template <class S>
Tensor<S> mul(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
  return binary_elementwise(tape, a, b, BinKind::Mul);
}

template <class S>
Tensor<S> scale(Tape<S>& tape, const Tensor<S>& a, double c) {
  Tensor<S> out = make_out<S>(a.shape(), a.requires_grad());
  const S cs = static_cast<S>(c);
  const S* av = a.value().data();
  S* ov = out.value().data();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) ov[i] = cs * av[i];
  if (a.requires_grad()) {
    auto ai = a.impl();
    auto oi = out.impl();
    tape.record([ai, oi, cs, n]() {
      S* ga = ai->grad.data();
      const S* gy = oi->grad.data();
      for (std::int64_t i = 0; i < n; ++i) ga[i] += cs * gy[i];
    });
  }
  return out;
}

template <class S>
Tensor<S> tanh(Tape<S>& tape, const Tensor<S>& a) {
  Tensor<S> out = make_out<S>(a.shape(), a.requires_grad());
  const S* av = a.value().data();
  S* ov = out.value().data();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) ov[i] = std::tanh(av[i]);
  if (a.requires_grad()) {
    auto ai = a.impl();
    auto oi = out.impl();
    tape.record([ai, oi, n]() {
      S* ga = ai->grad.data();
      const S* gy = oi->grad.data();
      const S* y = oi->value.data();
      for (std::int64_t i = 0; i < n; ++i) ga[i] += gy[i] * (S(1) - y[i] * y[i]);
    });
  }
  return out;
}

template <class S>
Tensor<S> gelu(Tape<S>& tape, const Tensor<S>& a) {
  Tensor<S> out = make_out<S>(a.shape(), a.requires_grad());
  const S* av = a.value().data();
  S* ov = out.value().data();
  const std::int64_t n = a.numel();
  const S inv_sqrt2 = static_cast<S>(0.70710678118654752440);
  for (std::int64_t i = 0; i < n; ++i) {
    const S x = av[i];
    ov[i] = S(0.5) * x * (S(1) + std::erf(x * inv_sqrt2));
  }
  if (a.requires_grad()) {
    auto ai = a.impl();
    auto oi = out.impl();
    tape.record([ai, oi, n, inv_sqrt2]() {
      S* ga = ai->grad.data();
      const S* gy = oi->grad.data();
      const S* x = ai->value.data();
      const S inv_sqrt2pi = static_cast<S>(0.39894228040143267794);
      for (std::int64_t i = 0; i < n; ++i) {
        const S xi = x[i];
        const S cdf = S(0.5) * (S(1) + std::erf(xi * inv_sqrt2));
        const S pdf = inv_sqrt2pi * std::exp(S(-0.5) * xi * xi);
        ga[i] += gy[i] * (cdf + xi * pdf);
      }
    });
  }
  return out;
}

// ---- matrix products ---------------------------------------------------------

namespace {

template <class S>
MatDims<S> matmul_dims(const Tensor<S>& a, const Tensor<S>& b, bool b_transposed,
                       const char* op) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError(std::string(op) + ": expected rank-2 operands, got " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::int64_t m = a.dim(0), k = a.dim(1);
  const std::int64_t bk = b_transposed ? b.dim(1) : b.dim(0);
  const std::int64_t n = b_transposed ? b.dim(0) : b.dim(1);
  if (k != bk)
    throw ShapeError(std::string(op) + ": inner extents differ, " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  return {m, k, n};
}

}  // namespace

template <class S>
Tensor<S> matmul(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
  const auto [m, k, n] = matmul_dims(a, b, false, "matmul");
  const bool rg = a.requires_grad() || b.requires_grad();
  Tensor<S> out = make_out<S>({m, n}, rg);
  MapM<S>(out.value().data(), m, n).noalias() =
      CMapM<S>(a.value().data(), m, k) * CMapM<S>(b.value().data(), k, n);
  if (rg) {
    auto ai = a.impl();
    auto bi = b.impl();
    auto oi = out.impl();
    tape.record([ai, bi, oi, m, k, n]() {
      CMapM<S> g(oi->grad.data(), m, n);
      if (ai->requires_grad)
        MapM<S>(ai->grad.data(), m, k).noalias() +=
            g * CMapM<S>(bi->value.data(), k, n).transpose();
      if (bi->requires_grad)
        MapM<S>(bi->grad.data(), k, n).noalias() +=
            CMapM<S>(ai->value.data(), m, k).transpose() * g;
    });
  }
  return out;
}

template <class S>
Tensor<S> matmul_nt(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
  const auto [m, k, n] = matmul_dims(a, b, true, "matmul_nt");
  const bool rg = a.requires_grad() || b.requires_grad();
  Tensor<S> out = make_out<S>({m, n}, rg);
  MapM<S>(out.value().data(), m, n).noalias() =
      CMapM<S>(a.value().data(), m, k) * CMapM<S>(b.value().data(), n, k).transpose();
  if (rg) {
    auto ai = a.impl();
    auto bi = b.impl();
    auto oi = out.impl();
    tape.record([ai, bi, oi, m, k, n]() {
      CMapM<S> g(oi->grad.data(), m, n);
      if (ai->requires_grad)
        MapM<S>(ai->grad.data(), m, k).noalias() += g * CMapM<S>(bi->value.data(), n, k);
      if (bi->requires_grad)
        MapM<S>(bi->grad.data(), n, k).noalias() +=
            g.transpose() * CMapM<S>(ai->value.data(), m, k);
    });
  }
  return out;
}

namespace {

template <class S>
void bmm_check(const Tensor<S>& a, const Tensor<S>& b, bool nt, std::int64_t& batch,
               std::int64_t& m, std::int64_t& k, std::int64_t& n) {
  if (b.rank() != 3) throw ShapeError("bmm: rhs must be rank 3, got " + shape_str(b.shape()));
  batch = b.dim(0);
  if (a.rank() == 3) {
    if (a.dim(0) != batch)
      throw ShapeError("bmm: batch extents differ, " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
    m = a.dim(1);
    k = a.dim(2);
  } else if (a.rank() == 2 && !nt) {
    m = a.dim(0);
    k = a.dim(1);
  } else {
    throw ShapeError("bmm: lhs must be rank 3 (or rank 2 shared), got " +
                     shape_str(a.shape()));
  }
  const std::int64_t bk = nt ? b.dim(2) : b.dim(1);
  n = nt ? b.dim(1) : b.dim(2);
  if (k != bk)
    throw ShapeError("bmm: inner extents differ, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

}  // namespace

template <class S>
Tensor<S> bmm(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
  std::int64_t batch, m, k, n;
  bmm_check(a, b, false, batch, m, k, n);
  const bool shared_a = a.rank() == 2;
  const bool micro = m * k * n <= kMicroGemmFlops;
  const bool rg = a.requires_grad() || b.requires_grad();
  Tensor<S> out = make_out<S>({batch, m, n}, rg);
  for (std::int64_t i = 0; i < batch; ++i) {
    const S* av = a.value().data() + (shared_a ? 0 : i * m * k);
    const S* bv = b.value().data() + i * k * n;
    S* ov = out.value().data() + i * m * n;
    if (micro)
      micro_gemm_acc<S, false>(av, bv, ov, m, k, n);
    else
      MapM<S>(ov, m, n).noalias() = CMapM<S>(av, m, k) * CMapM<S>(bv, k, n);
  }
  if (rg) {
    auto ai = a.impl();
    auto bi = b.impl();
    auto oi = out.impl();
    tape.record([ai, bi, oi, batch, m, k, n, shared_a, micro]() {
      for (std::int64_t i = 0; i < batch; ++i) {
        const S* g = oi->grad.data() + i * m * n;
        const S* av = ai->value.data() + (shared_a ? 0 : i * m * k);
        const S* bv = bi->value.data() + i * k * n;
        if (ai->requires_grad) {
          S* ga = ai->grad.data() + (shared_a ? 0 : i * m * k);
          if (micro)
            micro_gemm_nt_acc(g, bv, ga, m, n, k);  // gA (m,k) += G (m,n) @ B^T
          else
            MapM<S>(ga, m, k).noalias() += CMapM<S>(g, m, n) * CMapM<S>(bv, k, n).transpose();
        }
        if (bi->requires_grad) {
          S* gb = bi->grad.data() + i * k * n;
          if (micro)
            micro_gemm_tn_acc(av, g, gb, m, k, n);  // gB (k,n) += A^T @ G
          else
            MapM<S>(gb, k, n).noalias() += CMapM<S>(av, m, k).transpose() * CMapM<S>(g, m, n);
        }
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> bmm_nt(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
  std::int64_t batch, m, k, n;
  bmm_check(a, b, true, batch, m, k, n);
  const bool micro = m * k * n <= kMicroGemmFlops;
  const bool rg = a.requires_grad() || b.requires_grad();
  Tensor<S> out = make_out<S>({batch, m, n}, rg);
  for (std::int64_t i = 0; i < batch; ++i) {
    const S* av = a.value().data() + i * m * k;
    const S* bv = b.value().data() + i * n * k;
    S* ov = out.value().data() + i * m * n;
    if (micro)
      micro_gemm_nt_acc<S, false>(av, bv, ov, m, k, n);
    else
      MapM<S>(ov, m, n).noalias() = CMapM<S>(av, m, k) * CMapM<S>(bv, n, k).transpose();
  }
  if (rg) {
    auto ai = a.impl();
    auto bi = b.impl();
    auto oi = out.impl();
    tape.record([ai, bi, oi, batch, m, k, n, micro]() {
      for (std::int64_t i = 0; i < batch; ++i) {
        const S* g = oi->grad.data() + i * m * n;
        const S* av = ai->value.data() + i * m * k;
        const S* bv = bi->value.data() + i * n * k;
        if (ai->requires_grad) {
          S* ga = ai->grad.data() + i * m * k;
          if (micro)
            micro_gemm_acc(g, bv, ga, m, n, k);  // gA (m,k) += G (m,n) @ B (n,k)
          else
            MapM<S>(ga, m, k).noalias() += CMapM<S>(g, m, n) * CMapM<S>(bv, n, k);
        }
        if (bi->requires_grad) {
          S* gb = bi->grad.data() + i * n * k;
          if (micro)
            micro_gemm_tn_acc(g, av, gb, m, n, k);  // gB (n,k) += G^T @ A
          else
            MapM<S>(gb, n, k).noalias() += CMapM<S>(g, m, n).transpose() * CMapM<S>(av, m, k);
        }
      }
    });
  }
  return out;
}

// ---- shape manipulation --------------------------------------------------------

template <class S>
Tensor<S> reshape(Tape<S>& tape, const Tensor<S>& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                     shape_str(shape));
  Tensor<S> out = make_out<S>(std::move(shape), a.requires_grad());
  std::copy(a.value().begin(), a.value().end(), out.value().begin());
  if (a.requires_grad()) {
    auto ai = a.impl();
    auto oi = out.impl();
    tape.record([ai, oi]() {
      const std::size_t n = ai->grad.size();
      for (std::size_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i];
    });
  }
  return out;
}

template <class S>
Tensor<S> transpose_last(Tape<S>& tape, const Tensor<S>& a) {
  if (a.rank() < 2) throw ShapeError("transpose_last: rank must be >= 2");
  Shape out_shape = a.shape();
  std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
  const std::int64_t rows = a.dim(a.rank() - 2);
  const std::int64_t cols = a.dim(a.rank() - 1);
  const std::int64_t batch = a.numel() / (rows * cols);
  Tensor<S> out = make_out<S>(std::move(out_shape), a.requires_grad());
  const S* av = a.value().data();
  S* ov = out.value().data();
  for (std::int64_t b = 0; b < batch; ++b) {
    const S* src = av + b * rows * cols;
    S* dst = ov + b * rows * cols;
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
  }
  if (a.requires_grad()) {
    auto ai = a.impl();
    auto oi = out.impl();
    tape.record([ai, oi, batch, rows, cols]() {
      for (std::int64_t b = 0; b < batch; ++b) {
        S* ga = ai->grad.data() + b * rows * cols;
        const S* gy = oi->grad.data() + b * rows * cols;
        for (std::int64_t r = 0; r < rows; ++r)
          for (std::int64_t c = 0; c < cols; ++c) ga[r * cols + c] += gy[c * rows + r];
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> permute(Tape<S>& tape, const Tensor<S>& a, const std::vector<std::int64_t>& perm) {
  const std::size_t r = a.shape().size();
  if (perm.size() != r) throw ShapeError("permute: perm rank mismatch");
  std::vector<bool> seen(r, false);
  for (auto p : perm) {
    if (p < 0 || p >= static_cast<std::int64_t>(r) || seen[static_cast<std::size_t>(p)])
      throw ShapeError("permute: invalid permutation");
    seen[static_cast<std::size_t>(p)] = true;
  }
  Shape out_shape(r);
  for (std::size_t d = 0; d < r; ++d) out_shape[d] = a.dim(perm[d]);

  // Input strides seen through the permuted output index space.
  std::vector<std::int64_t> in_str(r);
  std::int64_t s = 1;
  for (std::size_t d = r; d-- > 0;) {
    in_str[d] = s;
    s *= a.dim(static_cast<std::int64_t>(d));
  }
  std::vector<std::int64_t> strides(r);
  for (std::size_t d = 0; d < r; ++d) strides[d] = in_str[static_cast<std::size_t>(perm[d])];

  Tensor<S> out = make_out<S>(out_shape, a.requires_grad());
  const S* av = a.value().data();
  S* ov = out.value().data();
  const std::vector<std::int64_t> zero(r, 0);
  for_each_bcast(out_shape, strides, zero,
                 [&](std::int64_t i, std::int64_t oa, std::int64_t) { ov[i] = av[oa]; });
  if (a.requires_grad()) {
    auto ai = a.impl();
    auto oi = out.impl();
    tape.record([ai, oi, out_shape, strides, zero]() {
      S* ga = ai->grad.data();
      const S* gy = oi->grad.data();
      for_each_bcast(out_shape, strides, zero,
                     [&](std::int64_t i, std::int64_t oa, std::int64_t) { ga[oa] += gy[i]; });
    });
  }
  return out;
}

template <class S>
Tensor<S> slice(Tape<S>& tape, const Tensor<S>& a, std::int64_t axis, std::int64_t start,
                std::int64_t len) {
  axis_check(a.shape(), axis, "slice");
  if (start < 0 || len < 0 || start + len > a.dim(axis))
    throw IndexError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + len) + ") out of bounds for extent " +
                     std::to_string(a.dim(axis)));
  Shape out_shape = a.shape();
  out_shape[static_cast<std::size_t>(axis)] = len;
  std::int64_t outer = 1, inner = 1;
  for (std::int64_t d = 0; d < axis; ++d) outer *= a.dim(d);
  for (std::int64_t d = axis + 1; d < a.rank(); ++d) inner *= a.dim(d);
  const std::int64_t mid = a.dim(axis);

  Tensor<S> out = make_out<S>(std::move(out_shape), a.requires_grad());
  const S* av = a.value().data();
  S* ov = out.value().data();
  for (std::int64_t o = 0; o < outer; ++o)
    std::memcpy(ov + o * len * inner, av + (o * mid + start) * inner,
                static_cast<std::size_t>(len * inner) * sizeof(S));
  if (a.requires_grad()) {
    auto ai = a.impl();
    auto oi = out.impl();
    tape.record([ai, oi, outer, inner, mid, start, len]() {
      S* ga = ai->grad.data();
      const S* gy = oi->grad.data();
      for (std::int64_t o = 0; o < outer; ++o) {
        S* dst = ga + (o * mid + start) * inner;
        const S* src = gy + o * len * inner;
        for (std::int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> concat(Tape<S>& tape, const std::vector<Tensor<S>>& parts, std::int64_t axis) {
  if (parts.empty()) throw ShapeError("concat: no parts");
  axis_check(parts[0].shape(), axis, "concat");
  Shape out_shape = parts[0].shape();
  std::int64_t total_mid = 0;
  bool rg = false;
  for (const auto& p : parts) {
    if (p.rank() != parts[0].rank()) throw ShapeError("concat: rank mismatch");
    for (std::int64_t d = 0; d < p.rank(); ++d)
      if (d != axis && p.dim(d) != parts[0].dim(d))
        throw ShapeError("concat: extent mismatch at axis " + std::to_string(d));
    total_mid += p.dim(axis);
    rg = rg || p.requires_grad();
  }
  out_shape[static_cast<std::size_t>(axis)] = total_mid;

  std::int64_t outer = 1, inner = 1;
  for (std::int64_t d = 0; d < axis; ++d) outer *= parts[0].dim(d);
  for (std::int64_t d = axis + 1; d < parts[0].rank(); ++d) inner *= parts[0].dim(d);

  Tensor<S> out = make_out<S>(std::move(out_shape), rg);
  S* ov = out.value().data();
  std::int64_t off_mid = 0;
  for (const auto& p : parts) {
    const std::int64_t mid = p.dim(axis);
    const S* pv = p.value().data();
    for (std::int64_t o = 0; o < outer; ++o)
      std::memcpy(ov + (o * total_mid + off_mid) * inner, pv + o * mid * inner,
                  static_cast<std::size_t>(mid * inner) * sizeof(S));
    off_mid += mid;
  }
  if (rg) {
    std::vector<std::shared_ptr<TensorImpl<S>>> impls;
    impls.reserve(parts.size());
    for (const auto& p : parts) impls.push_back(p.impl());
    auto oi = out.impl();
    tape.record([impls, oi, outer, inner, total_mid]() {
      const S* gy = oi->grad.data();
      std::int64_t off_mid = 0;
      for (const auto& pi : impls) {
        std::int64_t part_numel = 1;
        for (auto d : pi->shape) part_numel *= d;
        const std::int64_t mid = part_numel / (outer * inner);
        if (pi->requires_grad) {
          S* ga = pi->grad.data();
          for (std::int64_t o = 0; o < outer; ++o) {
            const S* src = gy + (o * total_mid + off_mid) * inner;
            S* dst = ga + o * mid * inner;
            for (std::int64_t i = 0; i < mid * inner; ++i) dst[i] += src[i];
          }
        }
        off_mid += mid;
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> replicate_rows(Tape<S>& tape, const Tensor<S>& a, std::int64_t n) {
  if (a.rank() < 1) throw ShapeError("replicate_rows: rank must be >= 1");
  if (n < 1) throw ConfigError("replicate_rows: n must be >= 1");
  const std::int64_t d = a.dim(a.rank() - 1);
  const std::int64_t outer = a.numel() / d;
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(n);
  out_shape.push_back(d);
  Tensor<S> out = make_out<S>(std::move(out_shape), a.requires_grad());
  const S* av = a.value().data();
  S* ov = out.value().data();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t r = 0; r < n; ++r)
      std::memcpy(ov + (o * n + r) * d, av + o * d, static_cast<std::size_t>(d) * sizeof(S));
  if (a.requires_grad()) {
    auto ai = a.impl();
    auto oi = out.impl();
    tape.record([ai, oi, outer, n, d]() {
      S* ga = ai->grad.data();
      const S* gy = oi->grad.data();
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t r = 0; r < n; ++r) {
          const S* src = gy + (o * n + r) * d;
          S* dst = ga + o * d;
          for (std::int64_t i = 0; i < d; ++i) dst[i] += src[i];
        }
    });
  }
  return out;
}

template <class S>
Tensor<S> sum_axis(Tape<S>& tape, const Tensor<S>& a, std::int64_t axis) {
  axis_check(a.shape(), axis, "sum_axis");
  std::int64_t outer = 1, inner = 1;
  for (std::int64_t d = 0; d < axis; ++d) outer *= a.dim(d);
  for (std::int64_t d = axis + 1; d < a.rank(); ++d) inner *= a.dim(d);
  const std::int64_t mid = a.dim(axis);
  Shape out_shape;
  for (std::int64_t d = 0; d < a.rank(); ++d)
    if (d != axis) out_shape.push_back(a.dim(d));
  if (out_shape.empty()) out_shape.push_back(1);

  Tensor<S> out = make_out<S>(std::move(out_shape), a.requires_grad());
  const S* av = a.value().data();
  S* ov = out.value().data();
  std::fill(ov, ov + out.numel(), S(0));
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t m = 0; m < mid; ++m)
      for (std::int64_t i = 0; i < inner; ++i)
        ov[o * inner + i] += av[(o * mid + m) * inner + i];
  if (a.requires_grad()) {
    auto ai = a.impl();
    auto oi = out.impl();
    tape.record([ai, oi, outer, mid, inner]() {
      S* ga = ai->grad.data();
      const S* gy = oi->grad.data();
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t m = 0; m < mid; ++m)
          for (std::int64_t i = 0; i < inner; ++i)
            ga[(o * mid + m) * inner + i] += gy[o * inner + i];
    });
  }
  return out;
}

// ---- normalization, softmax, loss -----------------------------------------------

template <class S>
Tensor<S> layer_norm(Tape<S>& tape, const Tensor<S>& x, const Tensor<S>& gain,
                     const Tensor<S>& bias) {
  const std::int64_t d = x.dim(x.rank() - 1);
  if (d < 2) throw ShapeError("layer_norm: last-axis extent must be >= 2");
  const std::int64_t rows = x.numel() / d;
  const bool has_gain = gain.defined();
  const bool has_bias = bias.defined();
  if (has_gain && (gain.rank() != 1 || gain.dim(0) != d))
    throw ShapeError("layer_norm: gain must have shape (" + std::to_string(d) + ")");
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != d))
    throw ShapeError("layer_norm: bias must have shape (" + std::to_string(d) + ")");

  const bool rg = x.requires_grad() || (has_gain && gain.requires_grad()) ||
                  (has_bias && bias.requires_grad());
  Tensor<S> out = make_out<S>(x.shape(), rg);
  auto xhat = std::make_shared<std::vector<S>>(static_cast<std::size_t>(x.numel()));
  auto inv_std = std::make_shared<std::vector<S>>(static_cast<std::size_t>(rows));

  const S* xv = x.value().data();
  S* ov = out.value().data();
  const S* gv = has_gain ? gain.value().data() : nullptr;
  const S* bv = has_bias ? bias.value().data() : nullptr;
  const S eps = static_cast<S>(kNormEps);
  for (std::int64_t r = 0; r < rows; ++r) {
    const S* row = xv + r * d;
    S mean = 0;
    for (std::int64_t i = 0; i < d; ++i) mean += row[i];
    mean /= static_cast<S>(d);
    S var = 0;
    for (std::int64_t i = 0; i < d; ++i) {
      const S c = row[i] - mean;
      var += c * c;
    }
    var /= static_cast<S>(d);
    const S is = S(1) / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(r)] = is;
    for (std::int64_t i = 0; i < d; ++i) {
      const S xh = (row[i] - mean) * is;
      (*xhat)[static_cast<std::size_t>(r * d + i)] = xh;
      S y = xh;
      if (has_gain) y *= gv[i];
      if (has_bias) y += bv[i];
      ov[r * d + i] = y;
    }
  }

  if (rg) {
    auto xi = x.impl();
    auto gi = has_gain ? gain.impl() : nullptr;
    auto bi = has_bias ? bias.impl() : nullptr;
    auto oi = out.impl();
    tape.record([xi, gi, bi, oi, xhat, inv_std, rows, d]() {
      const S* gy = oi->grad.data();
      const S* gv = gi ? gi->value.data() : nullptr;
      for (std::int64_t r = 0; r < rows; ++r) {
        const S* g_row = gy + r * d;
        const S* xh_row = xhat->data() + r * d;
        if (bi && bi->requires_grad) {
          S* gb = bi->grad.data();
          for (std::int64_t i = 0; i < d; ++i) gb[i] += g_row[i];
        }
        if (gi && gi->requires_grad) {
          S* gg = gi->grad.data();
          for (std::int64_t i = 0; i < d; ++i) gg[i] += g_row[i] * xh_row[i];
        }
        if (xi->requires_grad) {
          S* gx = xi->grad.data() + r * d;
          const S is = (*inv_std)[static_cast<std::size_t>(r)];
          S sum_g = 0, sum_gx = 0;
          for (std::int64_t i = 0; i < d; ++i) {
            const S gh = gv ? g_row[i] * gv[i] : g_row[i];
            sum_g += gh;
            sum_gx += gh * xh_row[i];
          }
          const S mg = sum_g / static_cast<S>(d);
          const S mgx = sum_gx / static_cast<S>(d);
          for (std::int64_t i = 0; i < d; ++i) {
            const S gh = gv ? g_row[i] * gv[i] : g_row[i];
            gx[i] += is * (gh - mg - xh_row[i] * mgx);
          }
        }
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> rms_norm(Tape<S>& tape, const Tensor<S>& x, double eps_arg) {
  const std::int64_t d = x.dim(x.rank() - 1);
  const std::int64_t rows = x.numel() / d;
  Tensor<S> out = make_out<S>(x.shape(), x.requires_grad());
  auto inv_rms = std::make_shared<std::vector<S>>(static_cast<std::size_t>(rows));
  const S* xv = x.value().data();
  S* ov = out.value().data();
  const S eps = static_cast<S>(eps_arg);
  for (std::int64_t r = 0; r < rows; ++r) {
    const S* row = xv + r * d;
    S ms = 0;
    for (std::int64_t i = 0; i < d; ++i) ms += row[i] * row[i];
    ms /= static_cast<S>(d);
    const S denom = ms + eps;
    const S ir = denom == S(0) ? S(0) : S(1) / std::sqrt(denom);
    (*inv_rms)[static_cast<std::size_t>(r)] = ir;
    for (std::int64_t i = 0; i < d; ++i) ov[r * d + i] = row[i] * ir;
  }
  if (x.requires_grad()) {
    auto xi = x.impl();
    auto oi = out.impl();
    tape.record([xi, oi, inv_rms, rows, d]() {
      const S* gy = oi->grad.data();
      const S* y = oi->value.data();
      S* gx = xi->grad.data();
      for (std::int64_t r = 0; r < rows; ++r) {
        const S ir = (*inv_rms)[static_cast<std::size_t>(r)];
        S sum_gy = 0;
        for (std::int64_t i = 0; i < d; ++i) sum_gy += gy[r * d + i] * y[r * d + i];
        const S m = sum_gy / static_cast<S>(d);
        for (std::int64_t i = 0; i < d; ++i)
          gx[r * d + i] += ir * (gy[r * d + i] - y[r * d + i] * m);
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> softmax_last(Tape<S>& tape, const Tensor<S>& x) {
  const std::int64_t d = x.dim(x.rank() - 1);
  const std::int64_t rows = x.numel() / d;
  Tensor<S> out = make_out<S>(x.shape(), x.requires_grad());
  const S* xv = x.value().data();
  S* ov = out.value().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const S* row = xv + r * d;
    S* orow = ov + r * d;
    S mx = row[0];
    for (std::int64_t i = 1; i < d; ++i) mx = std::max(mx, row[i]);
    S sum = 0;
    for (std::int64_t i = 0; i < d; ++i) {
      orow[i] = std::exp(row[i] - mx);
      sum += orow[i];
    }
    const S inv = S(1) / sum;
    for (std::int64_t i = 0; i < d; ++i) orow[i] *= inv;
  }
  if (x.requires_grad()) {
    auto xi = x.impl();
    auto oi = out.impl();
    tape.record([xi, oi, rows, d]() {
      const S* gy = oi->grad.data();
      const S* p = oi->value.data();
      S* gx = xi->grad.data();
      for (std::int64_t r = 0; r < rows; ++r) {
        S dot = 0;
        for (std::int64_t i = 0; i < d; ++i) dot += gy[r * d + i] * p[r * d + i];
        for (std::int64_t i = 0; i < d; ++i)
          gx[r * d + i] += p[r * d + i] * (gy[r * d + i] - dot);
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> softmax_cross_entropy(Tape<S>& tape, const Tensor<S>& logits,
                                const std::vector<std::int32_t>& targets,
                                std::int32_t ignore_index) {
  if (logits.rank() != 2)
    throw ShapeError("softmax_cross_entropy: logits must be rank 2, got " +
                     shape_str(logits.shape()));
  const std::int64_t rows = logits.dim(0);
  const std::int64_t vocab = logits.dim(1);
  if (static_cast<std::int64_t>(targets.size()) != rows)
    throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) +
                     " targets for " + std::to_string(rows) + " rows");
  for (std::int64_t r = 0; r < rows; ++r) {
    const auto t = targets[static_cast<std::size_t>(r)];
    if (t == ignore_index) continue;
    if (t < 0 || t >= vocab)
      throw IndexError("softmax_cross_entropy: target " + std::to_string(t) +
                       " out of vocab " + std::to_string(vocab));
  }

  auto probs = std::make_shared<std::vector<S>>(static_cast<std::size_t>(rows * vocab));
  const S* lv = logits.value().data();
  double total = 0;
  std::int64_t counted = 0;
  for (std::int64_t r = 0; r < rows; ++r) {
    const S* row = lv + r * vocab;
    S* prow = probs->data() + r * vocab;
    S mx = row[0];
    for (std::int64_t i = 1; i < vocab; ++i) mx = std::max(mx, row[i]);
    S sum = 0;
    for (std::int64_t i = 0; i < vocab; ++i) {
      prow[i] = std::exp(row[i] - mx);
      sum += prow[i];
    }
    const S inv = S(1) / sum;
    for (std::int64_t i = 0; i < vocab; ++i) prow[i] *= inv;
    const auto t = targets[static_cast<std::size_t>(r)];
    if (t == ignore_index) continue;
    const double lse = static_cast<double>(mx) + std::log(static_cast<double>(sum));
    total += lse - static_cast<double>(row[t]);
    ++counted;
  }
  if (counted == 0) throw EvalError("softmax_cross_entropy: no target positions");

  Tensor<S> out =
      Tensor<S>::scalar(static_cast<S>(total / static_cast<double>(counted)),
                        logits.requires_grad());
  if (logits.requires_grad()) {
    auto li = logits.impl();
    auto oi = out.impl();
    auto tgts = targets;
    tape.record([li, oi, probs, tgts, rows, vocab, counted, ignore_index]() {
      const S g = oi->grad[0];
      const S inv_cnt = S(1) / static_cast<S>(counted);
      S* gl = li->grad.data();
      for (std::int64_t r = 0; r < rows; ++r) {
        const auto t = tgts[static_cast<std::size_t>(r)];
        if (t == ignore_index) continue;
        const S* prow = probs->data() + r * vocab;
        S* grow = gl + r * vocab;
        for (std::int64_t i = 0; i < vocab; ++i) grow[i] += g * prow[i] * inv_cnt;
        grow[t] -= g * inv_cnt;
      }
    });
  }
  return out;
}

// ---- lookup & regularization -------------------------------------------------------

template <class S>
Tensor<S> embedding(Tape<S>& tape, const Tensor<S>& weight,
                    const std::vector<std::int32_t>& ids) {
  if (weight.rank() != 2)
    throw ShapeError("embedding: weight must be rank 2, got " + shape_str(weight.shape()));
  const std::int64_t vocab = weight.dim(0);
  const std::int64_t d = weight.dim(1);
  for (auto id : ids)
    if (id < 0 || id >= vocab)
      throw IndexError("embedding: id " + std::to_string(id) + " out of vocab " +
                       std::to_string(vocab));
  const std::int64_t n = static_cast<std::int64_t>(ids.size());
  Tensor<S> out = make_out<S>({n, d}, weight.requires_grad());
  const S* wv = weight.value().data();
  S* ov = out.value().data();
  for (std::int64_t i = 0; i < n; ++i)
    std::memcpy(ov + i * d, wv + static_cast<std::int64_t>(ids[static_cast<std::size_t>(i)]) * d,
                static_cast<std::size_t>(d) * sizeof(S));
  if (weight.requires_grad()) {
    auto wi = weight.impl();
    auto oi = out.impl();
    auto idv = ids;
    tape.record([wi, oi, idv, n, d]() {
      S* gw = wi->grad.data();
      const S* gy = oi->grad.data();
      for (std::int64_t i = 0; i < n; ++i) {
        S* dst = gw + static_cast<std::int64_t>(idv[static_cast<std::size_t>(i)]) * d;
        const S* src = gy + i * d;
        for (std::int64_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> dropout(Tape<S>& tape, const Tensor<S>& x, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: p must be in [0, 1)");
  if (p == 0.0) return x;
  const std::int64_t n = x.numel();
  auto mask = std::make_shared<std::vector<S>>(static_cast<std::size_t>(n));
  const S keep_scale = static_cast<S>(1.0 / (1.0 - p));
  for (auto& m : *mask) m = rng.uniform() < p ? S(0) : keep_scale;
  Tensor<S> out = make_out<S>(x.shape(), x.requires_grad());
  const S* xv = x.value().data();
  S* ov = out.value().data();
  for (std::int64_t i = 0; i < n; ++i) ov[i] = xv[i] * (*mask)[static_cast<std::size_t>(i)];
  if (x.requires_grad()) {
    auto xi = x.impl();
    auto oi = out.impl();
    tape.record([xi, oi, mask, n]() {
      S* gx = xi->grad.data();
      const S* gy = oi->grad.data();
      for (std::int64_t i = 0; i < n; ++i) gx[i] += gy[i] * (*mask)[static_cast<std::size_t>(i)];
    });
  }
  return out;
}

// ---- explicit instantiations ---------------------------------------------------

#define HC_INSTANTIATE_OPS(S)                                                               \
  template Tensor<S> add(Tape<S>&, const Tensor<S>&, const Tensor<S>&);                    \
  template Tensor<S> sub(Tape<S>&, const Tensor<S>&, const Tensor<S>&);                    \
  template Tensor<S> mul(Tape<S>&, const Tensor<S>&, const Tensor<S>&);                    \
  template Tensor<S> scale(Tape<S>&, const Tensor<S>&, double);                            \
  template Tensor<S> tanh(Tape<S>&, const Tensor<S>&);                                     \
  template Tensor<S> gelu(Tape<S>&, const Tensor<S>&);                                     \
  template Tensor<S> matmul(Tape<S>&, const Tensor<S>&, const Tensor<S>&);                 \
  template Tensor<S> matmul_nt(Tape<S>&, const Tensor<S>&, const Tensor<S>&);              \
  template Tensor<S> bmm(Tape<S>&, const Tensor<S>&, const Tensor<S>&);                    \
  template Tensor<S> bmm_nt(Tape<S>&, const Tensor<S>&, const Tensor<S>&);                 \
  template Tensor<S> reshape(Tape<S>&, const Tensor<S>&, Shape);                           \
  template Tensor<S> transpose_last(Tape<S>&, const Tensor<S>&);                           \
  template Tensor<S> permute(Tape<S>&, const Tensor<S>&,                                   \
                             const std::vector<std::int64_t>&);                            \
  template Tensor<S> slice(Tape<S>&, const Tensor<S>&, std::int64_t, std::int64_t,         \
                           std::int64_t);                                                  \
  template Tensor<S> concat(Tape<S>&, const std::vector<Tensor<S>>&, std::int64_t);        \
  template Tensor<S> replicate_rows(Tape<S>&, const Tensor<S>&, std::int64_t);             \
  template Tensor<S> sum_axis(Tape<S>&, const Tensor<S>&, std::int64_t);                   \
  template Tensor<S> layer_norm(Tape<S>&, const Tensor<S>&, const Tensor<S>&,              \
                                const Tensor<S>&);                                         \
  template Tensor<S> rms_norm(Tape<S>&, const Tensor<S>&, double);                         \
  template Tensor<S> softmax_last(Tape<S>&, const Tensor<S>&);                             \
  template Tensor<S> softmax_cross_entropy(Tape<S>&, const Tensor<S>&,                     \
                                           const std::vector<std::int32_t>&, std::int32_t); \
  template Tensor<S> embedding(Tape<S>&, const Tensor<S>&,                                 \
                               const std::vector<std::int32_t>&);                          \
  template Tensor<S> dropout(Tape<S>&, const Tensor<S>&, double, Rng&);

HC_INSTANTIATE_OPS(float)
HC_INSTANTIATE_OPS(double)

#undef HC_INSTANTIATE_OPS

}  // namespace hc::ops
