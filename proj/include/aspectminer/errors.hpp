#pragma once

#include <stdexcept>
#include <string>

namespace aspectminer {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File missing or unreadable.
class LoadError : public Error {
 public:
  using Error::Error;
};

// Input parsed but violates the format contract (bad row, unknown label).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Weights, metadata or settings disagree with what was requested.
class ConfigurationError : public Error {
 public:
  using Error::Error;
};

// Caller broke a precondition (empty model map, length mismatch, ...).
class UsageError : public Error {
 public:
  using Error::Error;
};

class FitError : public Error {
 public:
  using Error::Error;
};

class TrainError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class PoolingError : public Error {
 public:
  using Error::Error;
};

class SplitError : public Error {
 public:
  using Error::Error;
};

}  // namespace aspectminer
