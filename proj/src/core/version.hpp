#pragma once

namespace mstage {

inline constexpr const char* kLibVersion = "0.1.0";

}  // namespace mstage
