#pragma once

#include <stdexcept>
#include <string>

namespace lightray {

/// Precondition violated by a caller-supplied argument.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A gauge map failed its unitarity check at an evaluated point.
class InvalidGauge : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Direction set does not span the tangent space.
class DegenerateSpan : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Lightlike pair with coincident directions; no normal form exists.
class DegeneratePair : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Grid violates the CFL bound or cannot contain the signal.
class InvalidGrid : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The explicit scheme left the small-data regime.
class Divergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A finite-difference stencil does not fit around the requested node.
class StencilError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Malformed or schema-violating experiment configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace lightray
