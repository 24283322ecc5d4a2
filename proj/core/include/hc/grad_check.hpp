#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "hc/ops.hpp"

namespace hc {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double worst_rel_err = 0.0;
  std::string worst_param;
  double step = 0.0;
  double tol = 0.0;
  bool pass = false;
};

// Compares analytic gradients of a deterministic scalar objective against
// central finite differences, element by element, for every listed
// parameter. Relative error uses max(|analytic|, |numeric|) with a floor
// so near-zero gradients are compared absolutely at floor * tol.
//
// f must rebuild its graph from the given parameter tensors on each call.
template <class S>
GradCheckReport grad_check(const std::function<Tensor<S>(Tape<S>&)>& f,
                           const std::vector<std::pair<std::string, Tensor<S>>>& params,
                           double step, double tol, double denom_floor = 1e-3);

extern template GradCheckReport grad_check<float>(
    const std::function<Tensor<float>(Tape<float>&)>&,
    const std::vector<std::pair<std::string, Tensor<float>>>&, double, double, double);
extern template GradCheckReport grad_check<double>(
    const std::function<Tensor<double>(Tape<double>&)>&,
    const std::vector<std::pair<std::string, Tensor<double>>>&, double, double, double);

}  // namespace hc
