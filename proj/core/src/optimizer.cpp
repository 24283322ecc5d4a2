#include "hc/optimizer.hpp"

#include <cmath>
#include <unordered_map>

namespace hc {

ParamGroup classify_param(const std::string& name) {
  if (name.find(".static_") != std::string::npos) return ParamGroup::HcStatic;
  for (const char* dyn : {".w_alpha", ".w_beta", ".s_alpha", ".s_beta", ".norm_gain"})
    if (name.find(dyn) != std::string::npos) return ParamGroup::HcDynamic;
  return ParamGroup::Regular;
}

const char* param_group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::Regular: return "regular";
    case ParamGroup::HcStatic: return "hc_static";
    case ParamGroup::HcDynamic: return "hc_dynamic";
  }
  return "?";
}

template <class S>
AdamW<S>::AdamW(const std::vector<std::pair<std::string, Tensor<S>>>& params, Options opts)
    : opts_(opts) {
  entries_.reserve(params.size());
  for (const auto& [name, p] : params) {
    if (!p.requires_grad()) throw ConfigError("AdamW: parameter '" + name + "' has no grad");
    Entry e{name, p, Tensor<S>::zeros(p.shape()), Tensor<S>::zeros(p.shape()),
            classify_param(name)};
    entries_.push_back(std::move(e));
  }
}

template <class S>
void AdamW<S>::zero_grad() {
  for (auto& e : entries_) e.param.zero_grad();
}

template <class S>
double AdamW<S>::global_grad_norm() const {
  double total = 0.0;
  for (const auto& e : entries_)
    for (S g : e.param.grad()) total += static_cast<double>(g) * static_cast<double>(g);
  return std::sqrt(total);
}

template <class S>
double AdamW<S>::clip_global_norm(double max_norm) {
  const double norm = global_grad_norm();
  if (max_norm > 0.0 && norm > max_norm) {
    const S scale = static_cast<S>(max_norm / norm);
    for (auto& e : entries_)
      for (S& g : e.param.grad()) g *= scale;
  }
  return norm;
}

template <class S>
void AdamW<S>::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  const S b1 = static_cast<S>(opts_.beta1);
  const S b2 = static_cast<S>(opts_.beta2);
  const S one_m_b1 = static_cast<S>(1.0 - opts_.beta1);
  const S one_m_b2 = static_cast<S>(1.0 - opts_.beta2);
  const S eps = static_cast<S>(opts_.eps);
  const S lr_s = static_cast<S>(lr);
  const S inv_bc1 = static_cast<S>(1.0 / bc1);
  const S inv_bc2 = static_cast<S>(1.0 / bc2);

  for (auto& e : entries_) {
    const bool decay = e.group != ParamGroup::HcStatic && opts_.weight_decay > 0.0;
    const S wd = static_cast<S>(opts_.weight_decay);
    auto pv = e.param.value();
    auto gv = e.param.grad();
    auto mv = e.m.value();
    auto vv = e.v.value();
    const std::int64_t numel = e.param.numel();
    for (std::int64_t i = 0; i < numel; ++i) {
      const S g = gv[i];
      mv[i] = b1 * mv[i] + one_m_b1 * g;
      vv[i] = b2 * vv[i] + one_m_b2 * g * g;
      const S mhat = mv[i] * inv_bc1;
      const S vhat = vv[i] * inv_bc2;
      S upd = mhat / (std::sqrt(vhat) + eps);
      if (decay) upd += wd * pv[i];
      pv[i] -= lr_s * upd;
    }
  }
}

template <class S>
std::vector<std::pair<std::string, Tensor<S>>> AdamW<S>::named_state() const {
  std::vector<std::pair<std::string, Tensor<S>>> out;
  out.reserve(entries_.size() * 2 + 1);
  for (const auto& e : entries_) {
    out.emplace_back("opt.m." + e.name, e.m);
    out.emplace_back("opt.v." + e.name, e.v);
  }
  out.emplace_back("opt.t", Tensor<S>::scalar(static_cast<S>(t_)));
  return out;
}

template <class S>
void AdamW<S>::load_state(const std::vector<std::pair<std::string, Tensor<S>>>& state) {
  std::unordered_map<std::string, Tensor<S>> by_name;
  for (const auto& [name, t] : state) by_name.emplace(name, t);
  for (auto& e : entries_) {
    for (auto* moment : {&e.m, &e.v}) {
      const std::string key =
          (moment == &e.m ? "opt.m." : "opt.v.") + e.name;
      auto it = by_name.find(key);
      if (it == by_name.end())
        throw ConfigError("AdamW: missing state record '" + key + "'");
      if (it->second.shape() != moment->shape())
        throw ConfigError("AdamW: state shape mismatch for '" + key + "'");
      std::copy(it->second.value().begin(), it->second.value().end(),
                moment->value().begin());
    }
  }
  auto it = by_name.find("opt.t");
  if (it == by_name.end()) throw ConfigError("AdamW: missing state record 'opt.t'");
  t_ = static_cast<std::uint64_t>(it->second.value()[0]);
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace hc
