#pragma once

namespace delaycast {

inline constexpr const char* kVersion = "0.1.0";

}
