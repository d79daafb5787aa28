#pragma once

#include <stdexcept>
#include <string>

namespace uasam {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced by a forward op or seen in a loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// Dataset problems. The subclasses let callers tell missing files,
/// bad headers and shape mismatches apart.
class DataError : public Error {
 public:
  using Error::Error;
};

class MissingFileError : public DataError {
 public:
  explicit MissingFileError(const std::string& path)
      : DataError("missing file: " + path), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

class MalformedHeaderError : public DataError {
 public:
  using DataError::DataError;
};

class ShapeMismatchError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace uasam
