#pragma once

#include <stdexcept>
#include <string>

namespace diffspeed {

/// A precondition on an argument or configuration value was violated.
struct InvalidParameter : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// No usable first peak was found in an autocorrelation curve.
struct NoPeak : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A structured input file (scene, suite, container header) is missing a field or has the wrong type.
struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace diffspeed
