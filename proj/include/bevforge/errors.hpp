#pragma once

#include <stdexcept>
#include <string>

namespace bevforge {

// Base for every contract error raised by the library. The CLI maps these to
// exit code 1; IoError maps to exit code 2.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeMismatch : Error {
  using Error::Error;
};
struct DomainError : Error {
  using Error::Error;
};
struct NotScalar : Error {
  using Error::Error;
};
struct DoubleBackward : Error {
  using Error::Error;
};
struct MissingGradient : Error {
  using Error::Error;
};
struct NonPositiveDepth : Error {
  using Error::Error;
};
struct NonMonotoneSamples : Error {
  using Error::Error;
};
struct BadRange : Error {
  using Error::Error;
};
struct IndivisibleShape : Error {
  using Error::Error;
};
struct WindowMismatch : Error {
  using Error::Error;
};
struct EmptyValidSet : Error {
  using Error::Error;
};
struct AllIgnored : Error {
  using Error::Error;
};
struct DegenerateSpec : Error {
  using Error::Error;
};
struct DatasetTooSmall : Error {
  using Error::Error;
};
struct NoLabels : Error {
  using Error::Error;
};
struct MissingSplit : Error {
  using Error::Error;
};
struct BadFrame : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace bevforge
