#pragma once

namespace latgp {
inline constexpr const char* kVersion = "0.1.0";
}
