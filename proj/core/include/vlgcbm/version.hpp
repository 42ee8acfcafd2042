#pragma once

namespace vlgcbm {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace vlgcbm
