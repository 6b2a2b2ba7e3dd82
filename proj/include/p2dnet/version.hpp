#pragma once

namespace p2dnet {

inline constexpr const char* kToolName = "p2dnet";
inline constexpr const char* kVersion = "0.1.0";

} // namespace p2dnet
