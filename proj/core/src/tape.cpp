#include "hc/tape.hpp"

namespace hc {

template class Tape<float>;
template class Tape<double>;

}  // namespace hc
