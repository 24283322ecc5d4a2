#include "hc/tensor.hpp"

#include <sstream>

namespace hc {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ")";
  return os.str();
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace hc
