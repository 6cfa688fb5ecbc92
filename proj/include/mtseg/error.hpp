#pragma once

#include <stdexcept>
#include <string>

namespace mtseg {

// Caller broke a documented precondition (shape mismatch, non-binary mask, ...).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Invalid or inconsistent configuration values.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Unreadable, truncated or malformed input files.
class IngestionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss. The message carries the diagnostic dump.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mtseg
