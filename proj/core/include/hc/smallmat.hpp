#pragma once

#include <cstdint>
#include <vector>

#include "hc/errors.hpp"

namespace hc {

using DVec = std::vector<double>;

// Small dense row-major double matrix for connection-matrix algebra.
// Not meant for bulk numerics; the AD tensors handle that.
class DMat {
 public:
  DMat() = default;
  DMat(std::int64_t rows, std::int64_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), v_(static_cast<std::size_t>(rows * cols), fill) {}

  static DMat identity(std::int64_t n) {
    DMat m(n, n);
    for (std::int64_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
  static DMat ones(std::int64_t rows, std::int64_t cols) { return DMat(rows, cols, 1.0); }
  static DMat from_row(const DVec& v) {
    DMat m(1, static_cast<std::int64_t>(v.size()));
    m.v_ = v;
    return m;
  }
  static DMat from_col(const DVec& v) {
    DMat m(static_cast<std::int64_t>(v.size()), 1);
    m.v_ = v;
    return m;
  }

  std::int64_t rows() const { return rows_; }
  std::int64_t cols() const { return cols_; }

  double& operator()(std::int64_t r, std::int64_t c) {
    return v_[static_cast<std::size_t>(r * cols_ + c)];
  }
  double operator()(std::int64_t r, std::int64_t c) const {
    return v_[static_cast<std::size_t>(r * cols_ + c)];
  }

  const DVec& data() const { return v_; }
  DVec& data() { return v_; }

  DMat operator*(const DMat& rhs) const;
  DMat operator+(const DMat& rhs) const;
  DMat operator-(const DMat& rhs) const;
  DMat transposed() const;
  DMat scaled(double c) const;

  DVec row(std::int64_t r) const;
  DVec col(std::int64_t c) const;

  double max_abs_diff(const DMat& rhs) const;

 private:
  std::int64_t rows_ = 0;
  std::int64_t cols_ = 0;
  DVec v_;
};

}  // namespace hc
