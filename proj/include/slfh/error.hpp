#pragma once

#include <stdexcept>
#include <string>

namespace slfh {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration; carries the offending key path when known.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& message)
      : Error(key.empty() ? message : key + ": " + message), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

/// A pupil mask with no samples inside the representable band.
class EmptyPupilError : public Error {
 public:
  using Error::Error;
};

/// No light-field view lies inside the pupil disc.
class EmptyApertureError : public Error {
 public:
  using Error::Error;
};

class LightFieldError : public Error {
 public:
  using Error::Error;
};

class MissingViewError : public LightFieldError {
 public:
  MissingViewError(std::size_t row, std::size_t col, const std::string& path)
      : LightFieldError("missing view (" + std::to_string(row) + ", " + std::to_string(col) +
                        "): " + path),
        row_(row), col_(col) {}
  std::size_t row() const noexcept { return row_; }
  std::size_t col() const noexcept { return col_; }

 private:
  std::size_t row_, col_;
};

class InconsistentResolutionError : public LightFieldError {
 public:
  using LightFieldError::LightFieldError;
};

class MetadataError : public LightFieldError {
 public:
  using LightFieldError::LightFieldError;
};

/// Loss became non-finite or the divergence detector fired.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// A required run artifact (phase file, frozen config) is absent.
class MissingArtifactError : public Error {
 public:
  using Error::Error;
};

}  // namespace slfh
