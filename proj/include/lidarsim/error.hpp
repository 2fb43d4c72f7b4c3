#pragma once

#include <stdexcept>
#include <string>

namespace lidarsim {

/// Base for every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input text (scene, config, trajectory, CSV, ...).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Input parsed but violates a documented invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// A function was called outside its documented domain.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

class TrackerTimeout : public Error {
 public:
  using Error::Error;
};

}  // namespace lidarsim
