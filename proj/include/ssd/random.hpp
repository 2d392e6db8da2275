// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace ssd {

using Rng = std::mt19937_64;

// Independent stream per (seed, tag...) tuple so that e.g. data generation and
// weight init never share draws.
inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> tags = {}) {
    std::vector<std::uint32_t> words;
    words.reserve(2 + 2 * tags.size());
    auto push = [&](std::uint64_t v) {
        words.push_back(static_cast<std::uint32_t>(v & 0xffffffffu));
        words.push_back(static_cast<std::uint32_t>(v >> 32));
    };
    push(seed);
    for (auto t : tags) push(t);
    std::seed_seq seq(words.begin(), words.end());
    return Rng(seq);
}

// Stream tags.
namespace stream {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kRevival = 2;
inline constexpr std::uint64_t kData = 3;
inline constexpr std::uint64_t kSplit = 4;
inline constexpr std::uint64_t kShuffle = 5;
inline constexpr std::uint64_t kClassOrder = 6;
}  // namespace stream

}  // namespace ssd
