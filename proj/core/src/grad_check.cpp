#include "hc/grad_check.hpp"

#include <cmath>

namespace hc {

template <class S>
GradCheckReport grad_check(const std::function<Tensor<S>(Tape<S>&)>& f,
                           const std::vector<std::pair<std::string, Tensor<S>>>& params,
                           double step, double tol, double denom_floor) {
  for (const auto& [name, p] : params)
    if (!p.requires_grad())
      throw ConfigError("grad_check: parameter '" + name + "' does not require grad");

  // Analytic pass.
  std::vector<std::vector<S>> analytic;
  {
    for (const auto& [name, p] : params) Tensor<S>(p).zero_grad();
    Tape<S> tape;
    Tensor<S> loss = f(tape);
    if (!std::isfinite(static_cast<double>(loss.item())))
      throw EvalError("grad_check: objective is not finite");
    tape.backward(loss);
    analytic.reserve(params.size());
    for (const auto& [name, p] : params)
      analytic.emplace_back(p.grad().begin(), p.grad().end());
  }

  // Numeric pass: recording is disabled while the objective is re-evaluated.
  for (const auto& [name, p] : params) Tensor<S>(p).set_requires_grad(false);

  auto eval = [&]() {
    Tape<S> tape;
    Tensor<S> loss = f(tape);
    const double v = static_cast<double>(loss.item());
    if (!std::isfinite(v)) throw EvalError("grad_check: objective is not finite");
    return v;
  };

  GradCheckReport report;
  report.step = step;
  report.tol = tol;
  const S h = static_cast<S>(step);

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<S> tensor = params[pi].second;
    GradCheckEntry entry;
    entry.name = params[pi].first;
    auto vals = tensor.value();
    for (std::int64_t i = 0; i < tensor.numel(); ++i) {
      const S old = vals[i];
      vals[i] = old + h;
      const double f_plus = eval();
      const S x_plus = vals[i];
      vals[i] = old - h;
      const double f_minus = eval();
      const S x_minus = vals[i];
      vals[i] = old;

      const double numeric =
          (f_plus - f_minus) / (static_cast<double>(x_plus) - static_cast<double>(x_minus));
      const double a = static_cast<double>(analytic[pi][static_cast<std::size_t>(i)]);
      const double abs_err = std::abs(a - numeric);
      const double denom = std::max({std::abs(a), std::abs(numeric), denom_floor});
      const double rel = abs_err / denom;
      entry.max_abs_err = std::max(entry.max_abs_err, abs_err);
      if (rel > entry.max_rel_err) entry.max_rel_err = rel;
      if (rel > report.worst_rel_err) {
        report.worst_rel_err = rel;
        report.worst_param = entry.name;
      }
    }
    report.entries.push_back(std::move(entry));
  }

  for (const auto& [name, p] : params) Tensor<S>(p).set_requires_grad(true);

  report.pass = report.worst_rel_err < tol;
  return report;
}

template GradCheckReport grad_check<float>(
    const std::function<Tensor<float>(Tape<float>&)>&,
    const std::vector<std::pair<std::string, Tensor<float>>>&, double, double, double);
template GradCheckReport grad_check<double>(
    const std::function<Tensor<double>(Tape<double>&)>&,
    const std::vector<std::pair<std::string, Tensor<double>>>&, double, double, double);

}  // namespace hc
