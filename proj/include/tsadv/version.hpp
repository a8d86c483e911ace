#pragma once

namespace tsadv {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace tsadv
