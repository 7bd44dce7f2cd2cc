#pragma once

#include <stdexcept>
#include <string>

namespace slp {

// Malformed input data: bad files, inconsistent shapes, invalid skeletons.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values, failed gradient checks, diverged training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

} // namespace slp
