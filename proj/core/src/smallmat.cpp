#include "hc/smallmat.hpp"

#include <cmath>
#include <string>

namespace hc {

DMat DMat::operator*(const DMat& rhs) const {
  if (cols_ != rhs.rows_)
    throw ShapeError("DMat: inner extents differ, " + std::to_string(cols_) + " vs " +
                     std::to_string(rhs.rows_));
  DMat out(rows_, rhs.cols_);
  for (std::int64_t i = 0; i < rows_; ++i)
    for (std::int64_t k = 0; k < cols_; ++k) {
      const double a = (*this)(i, k);
      if (a == 0.0) continue;
      for (std::int64_t j = 0; j < rhs.cols_; ++j) out(i, j) += a * rhs(k, j);
    }
  return out;
}

DMat DMat::operator+(const DMat& rhs) const {
  if (rows_ != rhs.rows_ || cols_ != rhs.cols_) throw ShapeError("DMat: shape mismatch in +");
  DMat out = *this;
  for (std::size_t i = 0; i < v_.size(); ++i) out.v_[i] += rhs.v_[i];
  return out;
}

DMat DMat::operator-(const DMat& rhs) const {
  if (rows_ != rhs.rows_ || cols_ != rhs.cols_) throw ShapeError("DMat: shape mismatch in -");
  DMat out = *this;
  for (std::size_t i = 0; i < v_.size(); ++i) out.v_[i] -= rhs.v_[i];
  return out;
}

DMat DMat::transposed() const {
  DMat out(cols_, rows_);
  for (std::int64_t r = 0; r < rows_; ++r)
    for (std::int64_t c = 0; c < cols_; ++c) out(c, r) = (*this)(r, c);
  return out;
}

DMat DMat::scaled(double c) const {
  DMat out = *this;
  for (auto& v : out.v_) v *= c;
  return out;
}

DVec DMat::row(std::int64_t r) const {
  DVec out(static_cast<std::size_t>(cols_));
  for (std::int64_t c = 0; c < cols_; ++c) out[static_cast<std::size_t>(c)] = (*this)(r, c);
  return out;
}

DVec DMat::col(std::int64_t c) const {
  DVec out(static_cast<std::size_t>(rows_));
  for (std::int64_t r = 0; r < rows_; ++r) out[static_cast<std::size_t>(r)] = (*this)(r, c);
  return out;
}

double DMat::max_abs_diff(const DMat& rhs) const {
  if (rows_ != rhs.rows_ || cols_ != rhs.cols_)
    throw ShapeError("DMat: shape mismatch in max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < v_.size(); ++i) m = std::max(m, std::abs(v_[i] - rhs.v_[i]));
  return m;
}

}  // namespace hc
