#pragma once

namespace ssvi {
inline constexpr const char* kToolVersion = "0.1.0";
}
