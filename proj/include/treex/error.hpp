#pragma once

#include <stdexcept>
#include <string>

namespace treex {

// Bad user input: malformed files, dimension mismatches, invalid arguments.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inconsistent configuration (e.g. more mixture components than rows).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A box constraint carries (numerically) zero probability under the mixture.
class EmptyRegion : public std::runtime_error {
 public:
  explicit EmptyRegion(double mass)
      : std::runtime_error("box constraint has negligible mass: " + std::to_string(mass)),
        mass_(mass) {}
  double mass() const noexcept { return mass_; }

 private:
  double mass_;
};

}  // namespace treex

namespace treex {

// The blackbox failed while labeling samples for a node.
class BlackboxError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace treex
