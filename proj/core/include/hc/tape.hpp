#pragma once

#include <functional>
#include <vector>

#include "hc/tensor.hpp"

namespace hc {

// Records executed ops in order; backward() replays their adjoints in
// exact reverse execution order. Adjoints accumulate (sum) over all uses
// of a tensor. One tape is owned by one logical training step.
template <class S>
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  void record(BackwardFn fn) { nodes_.push_back(std::move(fn)); }

  std::size_t size() const { return nodes_.size(); }

  // Seeds d(root)/d(root) = 1 and propagates adjoints backwards.
  void backward(Tensor<S>& root) {
    if (root.numel() != 1) throw ShapeError("backward root must be scalar");
    if (!root.requires_grad()) throw Error("backward root does not require grad");
    root.grad()[0] += S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  void clear() { nodes_.clear(); }

 private:
  std::vector<BackwardFn> nodes_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace hc
