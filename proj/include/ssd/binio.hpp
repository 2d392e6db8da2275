// SPDX-License-Identifier: Apache-2.0
#pragma once

// Little-endian fixed-width encoding used by the checkpoint and embedding formats.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "ssd/error.hpp"

namespace ssd::binio {

template <class T>
void write_le(std::ostream& os, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::array<char, sizeof(T)> bytes{};
    std::memcpy(bytes.data(), &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// Throws MalformedFile when the stream ends early; `what` names the field being read.
template <class T>
T read_le(std::istream& is, const std::string& what) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::array<char, sizeof(T)> bytes{};
    is.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (is.gcount() != static_cast<std::streamsize>(bytes.size()))
        throw MalformedFile("unexpected end of file while reading " + what);
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    T value;
    std::memcpy(&value, bytes.data(), sizeof(T));
    return value;
}

inline void write_magic(std::ostream& os, const char (&magic)[9]) { os.write(magic, 8); }

inline void expect_magic(std::istream& is, const char (&magic)[9], const std::string& kind) {
    std::array<char, 8> got{};
    is.read(got.data(), 8);
    if (is.gcount() != 8 || std::memcmp(got.data(), magic, 8) != 0)
        throw MalformedFile("not a " + kind + " file (bad magic)");
}

}  // namespace ssd::binio
