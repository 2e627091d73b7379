// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace pic {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A length is not divisible by the requested chunk/memory count.
class DivisibilityError : public Error {
 public:
  using Error::Error;
};

/// Token id, row, layer or head index outside its valid range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// A caller violated a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Internal invariant broken; reaching this indicates a bug.
class InvariantError : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated or wrong-version file.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace pic
