#pragma once

#include <stdexcept>
#include <string>

namespace hc {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor extents do not line up (matmul inner dims, broadcast, ...).
class ShapeError : public Error {
 public:
  using Error::Error;
};

// An index (token id, axis, slice bound) is out of range.
class IndexError : public Error {
 public:
  using Error::Error;
};

// Invalid or inconsistent configuration (n = 0, warmup >= steps, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A mathematical precondition failed (non-positive radicand, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// File or stream problems: unreadable corpus, corrupt checkpoint, ...
class IoError : public Error {
 public:
  using Error::Error;
};

// A function evaluation produced non-finite values where finite ones
// were required (grad_check objective, training loss).
class EvalError : public Error {
 public:
  using Error::Error;
};

}  // namespace hc
