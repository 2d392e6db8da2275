// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace ssd {

class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Bad argument or configuration value (non-positive temperature, k out of range, ...).
class InvalidArgument : public Error {
  public:
    using Error::Error;
};

// Operand shapes disagree (vector lengths, matrix dims, trace vs model).
class ShapeMismatch : public Error {
  public:
    using Error::Error;
};

// Metric is mathematically undefined for the given input (BWT with one task, ...).
class UndefinedMetric : public Error {
  public:
    using Error::Error;
};

class FileUnreadable : public Error {
  public:
    using Error::Error;
};

class MalformedFile : public Error {
  public:
    using Error::Error;
};

class DimensionMismatch : public Error {
  public:
    using Error::Error;
};

namespace detail {

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw InvalidArgument(msg);
}

inline void require_shape(bool cond, const std::string& msg) {
    if (!cond) throw ShapeMismatch(msg);
}

}  // namespace detail
}  // namespace ssd
