#pragma once

#include <stdexcept>
#include <string>

namespace cbamnet {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents disagree (non-broadcastable shapes, bad fan-in, ...).
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value violates an operation precondition (non-finite input, bad rate, ...).
class ValueError : public Error {
 public:
  using Error::Error;
};

}  // namespace cbamnet
