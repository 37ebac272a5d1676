#pragma once

namespace kanalysis {
inline constexpr const char* kVersion = "0.1.0";
}
