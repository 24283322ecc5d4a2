#pragma once

#include <string>
#include <utility>
#include <vector>

#include "hc/tensor.hpp"

namespace hc {

// Weight-decay groups: static hyper-connection weights train without decay;
// the dynamic projections and gates, and everything else, decay.
enum class ParamGroup { Regular, HcStatic, HcDynamic };

ParamGroup classify_param(const std::string& name);
const char* param_group_name(ParamGroup g);

template <class S>
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };

  struct Entry {
    std::string name;
    Tensor<S> param;
    Tensor<S> m;
    Tensor<S> v;
    ParamGroup group;
  };

  AdamW(const std::vector<std::pair<std::string, Tensor<S>>>& params, Options opts);

  void zero_grad();
  double global_grad_norm() const;
  // Scales gradients down when their global norm exceeds max_norm;
  // returns the pre-clip norm.
  double clip_global_norm(double max_norm);
  void step(double lr);

  std::uint64_t t() const { return t_; }
  const Options& options() const { return opts_; }
  const std::vector<Entry>& entries() const { return entries_; }

  // Moment estimates and the step counter as named records, for checkpoints.
  std::vector<std::pair<std::string, Tensor<S>>> named_state() const;
  void load_state(const std::vector<std::pair<std::string, Tensor<S>>>& state);

 private:
  Options opts_;
  std::vector<Entry> entries_;
  std::uint64_t t_ = 0;
};

extern template class AdamW<float>;
extern template class AdamW<double>;

}  // namespace hc
