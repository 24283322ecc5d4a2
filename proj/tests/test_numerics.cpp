#include <cmath>

#include "doctest.h"
#include "hc/grad_check.hpp"
#include "hc/ops.hpp"

using namespace hc;

namespace {

constexpr std::uint64_t kSeed = 1234;

template <class S>
Tensor<S> weighted_mean(Tape<S>& tape, const Tensor<S>& t, Rng& rng) {
  Tensor<S> w = Tensor<S>::zeros(t.shape());
  for (auto& v : w.value()) v = rng.uniform() < 0.5 ? S(-1) : S(1);
  Tensor<S> flat = ops::reshape(tape, ops::mul(tape, t, w), {t.numel()});
  return ops::scale(tape, ops::sum_axis(tape, flat, 0), 1.0 / static_cast<double>(t.numel()));
}

template <class S>
double max_abs(std::span<const S> a, std::span<const S> b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

}  // namespace

TEST_CASE("matmul: identity passes through") {
  Tape<double> tape;
  Tensor<double> eye = Tensor<double>::zeros({3, 3});
  for (int i = 0; i < 3; ++i) eye.value()[static_cast<std::size_t>(i * 3 + i)] = 1.0;
  Rng rng(kSeed);
  Tensor<double> m = Tensor<double>::randn({3, 3}, rng);
  Tensor<double> out = ops::matmul(tape, eye, m);
  CHECK(max_abs<double>(out.value(), m.value()) == 0.0);
}

TEST_CASE("matmul: hand-computed 1x2 by 2x1") {
  Tape<double> tape;
  Tensor<double> a = Tensor<double>::from_data({1, 2}, {1.0, 2.0});
  Tensor<double> b = Tensor<double>::from_data({2, 1}, {3.0, 4.0});
  Tensor<double> out = ops::matmul(tape, a, b);
  CHECK(out.numel() == 1);
  CHECK(out.item() == doctest::Approx(11.0).epsilon(1e-15));
}

TEST_CASE("matmul: shape mismatch is a dimension error") {
  Tape<double> tape;
  Tensor<double> a = Tensor<double>::zeros({2, 3});
  Tensor<double> b = Tensor<double>::zeros({4, 5});
  CHECK_THROWS_AS(ops::matmul(tape, a, b), ShapeError);
}

TEST_CASE("matmul: 5x7 by 7x3 gradient matches finite differences at 32-bit") {
  Rng rng(kSeed + 1);
  Tensor<float> a = Tensor<float>::randn({5, 7}, rng, 0.5, true);
  Tensor<float> b = Tensor<float>::randn({7, 3}, rng, 0.5, true);
  Rng wrng(kSeed + 2);
  auto f = [&](Tape<float>& tape) {
    Rng local = wrng;
    return weighted_mean(tape, ops::matmul(tape, a, b), local);
  };
  const auto r = grad_check<float>(f, {{"a", a}, {"b", b}}, 1e-3, 1e-4, 1.0);
  CHECK_MESSAGE(r.pass, "worst rel err ", r.worst_rel_err, " at ", r.worst_param);
}

TEST_CASE("elementwise: tanh basics") {
  Tape<double> tape;
  Tensor<double> zero = Tensor<double>::zeros({4});
  CHECK(ops::tanh(tape, zero).value()[0] == 0.0);

  // tanh'(x) = 1 - tanh(x)^2, checked against central differences.
  Rng rng(kSeed + 3);
  Tensor<double> x = Tensor<double>::randn({32}, rng, 1.0, true);
  auto f = [&](Tape<double>& tp) {
    Rng local(kSeed + 4);
    return weighted_mean(tp, ops::tanh(tp, x), local);
  };
  const auto r = grad_check<double>(f, {{"x", x}}, 1e-5, 1e-6);
  CHECK_MESSAGE(r.pass, "worst rel err ", r.worst_rel_err);
}

TEST_CASE("elementwise: add identity and broadcasting") {
  Tape<double> tape;
  Rng rng(kSeed + 5);
  Tensor<double> x = Tensor<double>::randn({3, 5}, rng);
  Tensor<double> zero = Tensor<double>::zeros({3, 5});
  Tensor<double> out = ops::add(tape, x, zero);
  CHECK(max_abs<double>(out.value(), x.value()) == 0.0);

  // Row vector broadcast over the batch axis.
  Tensor<double> row = Tensor<double>::from_data({5}, {1, 2, 3, 4, 5});
  Tensor<double> sum = ops::add(tape, x, row);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 5; ++c)
      CHECK(sum.value()[static_cast<std::size_t>(r * 5 + c)] ==
            doctest::Approx(x.value()[static_cast<std::size_t>(r * 5 + c)] + (c + 1)));

  Tensor<double> bad = Tensor<double>::zeros({4});
  CHECK_THROWS_AS(ops::add(tape, x, bad), ShapeError);
}

TEST_CASE("elementwise: sub and adjoint accumulation over reuse") {
  Tape<double> tape;
  Tensor<double> x = Tensor<double>::from_data({3}, {1.0, 2.0, 3.0}, true);
  Tensor<double> y = Tensor<double>::from_data({3}, {0.5, 0.5, 0.5}, true);
  Tensor<double> d = ops::sub(tape, x, y);
  CHECK(d.value()[2] == 2.5);

  // x feeds two branches; its adjoint must sum over both uses.
  Tensor<double> two = ops::scale(tape, x, 2.0);
  Tensor<double> three = ops::scale(tape, x, 3.0);
  Tensor<double> total = ops::sum_axis(tape, ops::add(tape, two, three), 0);
  Tensor<double> loss = ops::add(tape, total, ops::sum_axis(tape, d, 0));
  tape.backward(loss);
  for (int i = 0; i < 3; ++i) CHECK(x.grad()[static_cast<std::size_t>(i)] == 6.0);
  for (int i = 0; i < 3; ++i) CHECK(y.grad()[static_cast<std::size_t>(i)] == -1.0);
}

TEST_CASE("layer_norm: constant vector maps to zeros") {
  Tape<double> tape;
  Tensor<double> x = Tensor<double>::filled({2, 8}, 3.25);
  Tensor<double> out = ops::layer_norm(tape, x);
  for (double v : out.value()) CHECK(v == 0.0);
}

TEST_CASE("layer_norm: invariant under positive scaling") {
  // The epsilon inside the root bounds exactness; at activation-sized
  // inputs the invariance holds to 1e-6.
  Tape<double> tape;
  Rng rng(kSeed + 6);
  Tensor<double> x = Tensor<double>::randn({4, 16}, rng, 10.0);
  Tensor<double> a = ops::layer_norm(tape, x);
  for (double c : {0.5, 3.0, 117.0}) {
    Tensor<double> b = ops::layer_norm(tape, ops::scale(tape, x, c));
    CHECK(max_abs<double>(a.value(), b.value()) < 1e-6);
  }
}

TEST_CASE("layer_norm: 1,2,3 normalizes to zero mean unit std") {
  Tape<double> tape;
  Tensor<double> x = Tensor<double>::from_data({1, 3}, {1.0, 2.0, 3.0});
  Tensor<double> out = ops::layer_norm(tape, x);
  double mean = 0.0;
  for (double v : out.value()) mean += v;
  mean /= 3.0;
  double var = 0.0;
  for (double v : out.value()) var += (v - mean) * (v - mean);
  const double stddev = std::sqrt(var / 3.0);
  CHECK(std::abs(mean) < 1e-12);
  CHECK(std::abs(stddev - 1.0) < 1e-5);
  // Direct formula: (x - 2) / sqrt(2/3 + eps).
  const double s = std::sqrt(2.0 / 3.0 + 1e-5);
  CHECK(out.value()[0] == doctest::Approx(-1.0 / s).epsilon(1e-12));
}

TEST_CASE("layer_norm: rejects width-1 rows") {
  Tape<double> tape;
  Tensor<double> x = Tensor<double>::zeros({4, 1});
  CHECK_THROWS_AS(ops::layer_norm(tape, x), ShapeError);
}

TEST_CASE("rms_norm: ones map to ones and scaling is ignored") {
  Tape<double> tape;
  Tensor<double> ones = Tensor<double>::ones({1, 8});
  Tensor<double> out = ops::rms_norm(tape, ones);
  for (double v : out.value()) CHECK(std::abs(v - 1.0) < 1e-5);

  Rng rng(kSeed + 7);
  Tensor<double> x = Tensor<double>::randn({4, 16}, rng, 10.0);
  Tensor<double> a = ops::rms_norm(tape, x);
  Tensor<double> b = ops::rms_norm(tape, ops::scale(tape, x, 42.0));
  CHECK(max_abs<double>(a.value(), b.value()) < 1e-6);
}

TEST_CASE("rms_norm: gradient matches finite differences at 32-bit") {
  Rng rng(kSeed + 8);
  Tensor<float> x = Tensor<float>::randn({3, 12}, rng, 0.5, true);
  auto f = [&](Tape<float>& tape) {
    Rng local(kSeed + 9);
    return weighted_mean(tape, ops::rms_norm(tape, x), local);
  };
  const auto r = grad_check<float>(f, {{"x", x}}, 1e-3, 1e-4, 1.0);
  CHECK_MESSAGE(r.pass, "worst rel err ", r.worst_rel_err);
}

TEST_CASE("softmax_cross_entropy: uniform logits give ln V") {
  Tape<double> tape;
  const std::int64_t vocab = 256;
  Tensor<double> logits = Tensor<double>::filled({4, vocab}, 0.73);
  const std::vector<std::int32_t> targets = {0, 17, 255, 31};
  Tensor<double> loss = ops::softmax_cross_entropy(tape, logits, targets);
  CHECK(loss.item() == doctest::Approx(std::log(256.0)).epsilon(1e-12));
}

TEST_CASE("softmax_cross_entropy: favoring the target lowers the loss") {
  Tape<double> tape;
  Tensor<double> logits = Tensor<double>::zeros({1, 16});
  logits.value()[5] = 2.0;
  Tensor<double> loss = ops::softmax_cross_entropy(tape, logits, {5});
  CHECK(loss.item() < std::log(16.0));
}

TEST_CASE("softmax_cross_entropy: out-of-vocab target is an index error") {
  Tape<double> tape;
  Tensor<double> logits = Tensor<double>::zeros({1, 8});
  CHECK_THROWS_AS(ops::softmax_cross_entropy(tape, logits, {8}), IndexError);
}

TEST_CASE("softmax_cross_entropy: gradient matches finite differences") {
  Rng rng(kSeed + 10);
  Tensor<double> logits = Tensor<double>::randn({5, 9}, rng, 1.0, true);
  const std::vector<std::int32_t> targets = {1, -1, 8, 0, 4};
  auto f = [&](Tape<double>& tape) {
    return ops::softmax_cross_entropy(tape, logits, targets, -1);
  };
  const auto r = grad_check<double>(f, {{"logits", logits}}, 1e-5, 1e-6);
  CHECK_MESSAGE(r.pass, "worst rel err ", r.worst_rel_err);
}

TEST_CASE("grad_check: quadratic objective is exact at 64-bit") {
  Rng rng(kSeed + 11);
  Tensor<double> theta = Tensor<double>::randn({23}, rng, 1.0, true);
  auto f = [&](Tape<double>& tape) {
    Tensor<double> sq = ops::mul(tape, theta, theta);
    return ops::sum_axis(tape, sq, 0);
  };
  const auto r = grad_check<double>(f, {{"theta", theta}}, 1e-5, 1e-9);
  CHECK_MESSAGE(r.pass, "worst rel err ", r.worst_rel_err);
}

TEST_CASE("grad_check: non-finite objective is an evaluation error") {
  Tensor<double> theta = Tensor<double>::ones({2}, true);
  auto f = [&](Tape<double>& tape) {
    Tensor<double> inf = Tensor<double>::filled({2}, std::numeric_limits<double>::infinity());
    Tensor<double> sum = ops::add(tape, theta, inf);
    return ops::sum_axis(tape, sum, 0);
  };
  CHECK_THROWS_AS((grad_check<double>(f, {{"theta", theta}}, 1e-5, 1e-6)), EvalError);
}

TEST_CASE("every differentiable op passes finite differences across ranks") {
  // One composite graph touching the shape ops, products, norms, and
  // activations at ranks 1 through 4.
  Rng rng(kSeed + 12);
  Tensor<double> x1 = Tensor<double>::randn({10}, rng, 1.0, true);
  Tensor<double> x2 = Tensor<double>::randn({4, 6}, rng, 1.0, true);
  Tensor<double> x3 = Tensor<double>::randn({3, 4, 6}, rng, 1.0, true);
  Tensor<double> x4 = Tensor<double>::randn({2, 3, 4, 6}, rng, 1.0, true);
  Tensor<double> w = Tensor<double>::randn({6, 6}, rng, 0.4, true);
  Tensor<double> gain = Tensor<double>::randn({6}, rng, 0.5, true);
  Tensor<double> bias = Tensor<double>::randn({6}, rng, 0.5, true);

  auto f = [&](Tape<double>& tape) {
    Rng local(kSeed + 13);
    Tensor<double> r1 = ops::gelu(tape, ops::tanh(tape, x1));
    Tensor<double> r2 = ops::layer_norm(
        tape, ops::sub(tape, ops::matmul_nt(tape, ops::matmul(tape, x2, w), w), x2), gain,
        bias);
    Tensor<double> t = ops::transpose_last(tape, x3);
    Tensor<double> r3 = ops::bmm_nt(tape, ops::bmm(tape, x3, t), ops::bmm(tape, x3, t));
    Tensor<double> sl = ops::slice(tape, x3, 2, 1, 3);
    Tensor<double> cat = ops::concat<double>(tape, {sl, sl}, 2);
    Tensor<double> p4 = ops::permute(tape, x4, {0, 2, 1, 3});
    Tensor<double> r4 = ops::sum_axis(tape, ops::rms_norm(tape, p4), 1);
    Tensor<double> rep = ops::replicate_rows(tape, ops::reshape(tape, x1, {2, 5}), 3);

    Tensor<double> parts = weighted_mean(tape, r1, local);
    parts = ops::add(tape, parts, weighted_mean(tape, r2, local));
    parts = ops::add(tape, parts, weighted_mean(tape, r3, local));
    parts = ops::add(tape, parts, weighted_mean(tape, cat, local));
    parts = ops::add(tape, parts, weighted_mean(tape, r4, local));
    parts = ops::add(tape, parts, weighted_mean(tape, rep, local));
    parts = ops::add(tape, parts, weighted_mean(tape, ops::softmax_last(tape, x2), local));
    return parts;
  };
  const auto r = grad_check<double>(
      f,
      {{"x1", x1}, {"x2", x2}, {"x3", x3}, {"x4", x4}, {"w", w}, {"gain", gain}, {"bias", bias}},
      1e-5, 1e-6);
  CHECK_MESSAGE(r.pass, "worst rel err ", r.worst_rel_err, " at ", r.worst_param);
}

TEST_CASE("layer_norm and cross-entropy gradients at 32-bit") {
  Rng rng(kSeed + 20);
  Tensor<float> x = Tensor<float>::randn({3, 8}, rng, 0.5, true);
  auto f_ln = [&](Tape<float>& tape) {
    Rng local(kSeed + 21);
    return weighted_mean(tape, ops::layer_norm(tape, x), local);
  };
  const auto r1 = grad_check<float>(f_ln, {{"x", x}}, 1e-3, 1e-4, 1.0);
  CHECK_MESSAGE(r1.pass, "layer_norm worst rel err ", r1.worst_rel_err);

  Tensor<float> logits = Tensor<float>::randn({4, 7}, rng, 0.5, true);
  const std::vector<std::int32_t> targets = {0, 6, 3, 2};
  auto f_ce = [&](Tape<float>& tape) {
    return ops::softmax_cross_entropy(tape, logits, targets);
  };
  const auto r2 = grad_check<float>(f_ce, {{"logits", logits}}, 1e-3, 1e-4, 1.0);
  CHECK_MESSAGE(r2.pass, "cross-entropy worst rel err ", r2.worst_rel_err);
}

TEST_CASE("embedding: gathers rows and scatters adjoints") {
  Rng rng(kSeed + 14);
  Tensor<double> w = Tensor<double>::randn({7, 4}, rng, 1.0, true);
  Tape<double> tape;
  const std::vector<std::int32_t> ids = {2, 2, 6, 0};
  Tensor<double> out = ops::embedding(tape, w, ids);
  CHECK(out.shape() == Shape{4, 4});
  for (int c = 0; c < 4; ++c)
    CHECK(out.value()[static_cast<std::size_t>(c)] ==
          w.value()[static_cast<std::size_t>(2 * 4 + c)]);
  CHECK_THROWS_AS(ops::embedding(tape, w, {7}), IndexError);

  Tensor<double> total = ops::sum_axis(tape, ops::reshape(tape, out, {16}), 0);
  tape.backward(total);
  // Row 2 was gathered twice, so its adjoint accumulates twice.
  CHECK(w.grad()[static_cast<std::size_t>(2 * 4)] == 2.0);
  CHECK(w.grad()[static_cast<std::size_t>(6 * 4)] == 1.0);
  CHECK(w.grad()[static_cast<std::size_t>(1 * 4)] == 0.0);
}

TEST_CASE("dropout: p = 0 is the identity, p > 0 rescales survivors") {
  Rng rng(kSeed + 15);
  Tensor<double> x = Tensor<double>::ones({1000});
  Tape<double> tape;
  Tensor<double> same = ops::dropout(tape, x, 0.0, rng);
  CHECK(same.same_impl(x));

  Tensor<double> dropped = ops::dropout(tape, x, 0.25, rng);
  std::int64_t kept = 0;
  for (double v : dropped.value()) {
    CHECK((v == 0.0 || v == doctest::Approx(1.0 / 0.75)));
    if (v != 0.0) ++kept;
  }
  CHECK(kept > 600);
  CHECK(kept < 900);
  CHECK_THROWS_AS(ops::dropout(tape, x, 1.0, rng), ConfigError);
}

TEST_CASE("replaying the same graph yields bit-identical outputs") {
  Rng rng(kSeed + 16);
  Tensor<double> x = Tensor<double>::randn({6, 8}, rng, 1.0, true);
  Tensor<double> w = Tensor<double>::randn({8, 8}, rng, 0.3, true);
  auto run = [&]() {
    Tape<double> tape;
    Tensor<double> h = ops::gelu(tape, ops::matmul(tape, ops::rms_norm(tape, x), w));
    Rng local(kSeed + 17);
    return weighted_mean(tape, h, local).item();
  };
  CHECK(run() == run());
}

TEST_CASE("ops keep finite inputs finite") {
  Rng rng(kSeed + 18);
  for (int trial = 0; trial < 20; ++trial) {
    Tape<double> tape;
    Tensor<double> x = Tensor<double>::randn({5, 9}, rng, 10.0);
    for (const Tensor<double>& out :
         {ops::tanh(tape, x), ops::gelu(tape, x), ops::layer_norm(tape, x),
          ops::rms_norm(tape, x), ops::softmax_last(tape, x)})
      for (double v : out.value()) CHECK(std::isfinite(v));
  }
}
