#pragma once

namespace usnn {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace usnn
