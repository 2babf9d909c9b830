#pragma once

namespace moesteer {

inline constexpr const char* kToolkitVersion = "0.1.0";

// Version of the line-delimited trace file format (header field "v").
inline constexpr int kTraceFormatVersion = 1;

}  // namespace moesteer
