#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace qcarleman {

// Exit-code classes used by the command line front end.
enum class ErrorClass : int {
  validation = 1,
  divergence = 2,
  capacity = 3,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorClass cls, const std::string& what) : std::runtime_error(what), cls_(cls) {}
  ErrorClass error_class() const noexcept { return cls_; }

 private:
  ErrorClass cls_;
};

class InvalidInput : public Error {
 public:
  explicit InvalidInput(const std::string& what) : Error(ErrorClass::validation, what) {}
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(ErrorClass::validation, "line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class DegreeMismatch : public Error {
 public:
  DegreeMismatch(int gradient_degree, int requested)
      : Error(ErrorClass::validation, "gradient has polynomial degree " + std::to_string(gradient_degree) +
                                          " but exact extraction requested degree " + std::to_string(requested)) {}
};

class EmptySupport : public Error {
 public:
  explicit EmptySupport(const std::string& what) : Error(ErrorClass::validation, what) {}
};

class DegenerateState : public Error {
 public:
  explicit DegenerateState(const std::string& what) : Error(ErrorClass::validation, what) {}
};

class NumericOverflow : public Error {
 public:
  explicit NumericOverflow(const std::string& what) : Error(ErrorClass::divergence, what) {}
};

class SingularSystem : public Error {
 public:
  SingularSystem(double sigma_min, double sigma_max)
      : Error(ErrorClass::divergence, "system is numerically singular (sigma_min=" + std::to_string(sigma_min) +
                                          ", sigma_max=" + std::to_string(sigma_max) + ")"),
        sigma_min_(sigma_min), sigma_max_(sigma_max) {}
  double sigma_min() const noexcept { return sigma_min_; }
  double sigma_max() const noexcept { return sigma_max_; }

 private:
  double sigma_min_;
  double sigma_max_;
};

// Raised when an iteration leaves the finite range or the configured norm bound.
class Divergence : public Error {
 public:
  Divergence(const std::string& what, std::int64_t step)
      : Error(ErrorClass::divergence, what + " at step " + std::to_string(step)), step_(step) {}
  std::int64_t step() const noexcept { return step_; }

 private:
  std::int64_t step_;
};

class CapacityError : public Error {
 public:
  CapacityError(const std::string& what, std::uint64_t required, std::uint64_t budget)
      : Error(ErrorClass::capacity, what + ": required " + std::to_string(required) + ", budget " +
                                        std::to_string(budget)),
        required_(required) {}
  std::uint64_t required() const noexcept { return required_; }

 private:
  std::uint64_t required_;
};

}  // namespace qcarleman
