#pragma once

#include <stdexcept>

namespace lgnn {

// Error taxonomy shared across the library. Everything derives from
// std::runtime_error so callers can catch broadly; the distinct types exist
// so tests and the CLI can tell contract violations apart.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct LabelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RegistryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateBatchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateFilterError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct UnsupportedLayerError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace lgnn
