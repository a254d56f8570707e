#ifndef FPRECT_TEXT_IO_HPP
#define FPRECT_TEXT_IO_HPP

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

namespace fprect {

// Decimal with 17 significant digits; round-trips any binary64 value.
inline std::string format_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// FNV-1a over raw bytes; used as the integrity checksum of text containers.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string checksum_hex(std::string_view bytes) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(bytes)));
    return buf;
}

} // namespace fprect

#endif
