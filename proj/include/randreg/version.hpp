#pragma once

namespace randreg {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace randreg
