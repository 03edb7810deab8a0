#pragma once

#include <stdexcept>
#include <string>

namespace usnn {

/// Thrown for every contract violation the library detects: bad files,
/// bad configs, dimension mismatches, degenerate inputs.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace usnn
