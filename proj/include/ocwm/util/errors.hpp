#pragma once

#include <stdexcept>
#include <string>

namespace ocwm {

// Error taxonomy mirrored by the CLI exit codes (see tools/ocwm.cpp).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};
struct MissingArtifactError : std::runtime_error {
  explicit MissingArtifactError(const std::string& m) : std::runtime_error(m) {}
};
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& m) : std::runtime_error(m) {}
};
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& m) : std::runtime_error(m) {}
};
struct ExistsError : std::runtime_error {
  explicit ExistsError(const std::string& m) : std::runtime_error(m) {}
};
struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& m) : std::runtime_error(m) {}
};

}  // namespace ocwm
