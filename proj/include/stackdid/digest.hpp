#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace stackdid {

/// 64-bit FNV-1a over raw bytes.
[[nodiscard]] constexpr std::uint64_t fnv1a64(std::string_view bytes) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (char c : bytes) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

/// Digest formatted for manifests, e.g. "fnv1a64:cbf29ce484222325".
[[nodiscard]] inline std::string fnv1a64_hex(std::string_view bytes) {
    static constexpr char digits[] = "0123456789abcdef";
    std::uint64_t h = fnv1a64(bytes);
    std::string out = "fnv1a64:";
    for (int shift = 60; shift >= 0; shift -= 4)
        out.push_back(digits[(h >> shift) & 0xf]);
    return out;
}

}  // namespace stackdid
