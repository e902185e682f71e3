#pragma once

namespace egoprep {

inline constexpr const char* kVersion = "0.1.0";

} // namespace egoprep
