#pragma once

#include <string_view>

namespace stackdid {

inline constexpr std::string_view version_string = "0.1.0";

/// Identity of the pseudo-random generator pipeline, recorded in output
/// metadata so that published results name the exact bit stream they used.
inline constexpr std::string_view prng_id = "xoshiro256pp-sm64/v1";

}  // namespace stackdid
