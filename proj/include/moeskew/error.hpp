// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace moeskew {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A caller passed arguments that violate an operation's preconditions
/// (dimension mismatch, divisibility, out-of-range parameter).
class InvalidArgument : public Error {
public:
  using Error::Error;
};

/// Input data is malformed or violates a declared invariant.
class DataError : public Error {
public:
  using Error::Error;
};

/// A file could not be opened, read, or written.
class IoError : public Error {
public:
  using Error::Error;
};

}  // namespace moeskew
