#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace prime::detail {

// splitmix64 finalizer; decorrelates seed/salt pairs.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline uint64_t hash_combine(uint64_t a, uint64_t b) {
    return mix64(a ^ (mix64(b) + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2)));
}

inline uint64_t hash_str(std::string_view s, uint64_t seed = 0xcbf29ce484222325ull) {
    uint64_t h = seed;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull; // FNV-1a
    }
    return h;
}

// Independent stream keyed by (seed, salt); identical keys give identical streams.
inline std::mt19937_64 seeded_rng(uint64_t seed, uint64_t salt) {
    return std::mt19937_64(hash_combine(seed, salt));
}

inline std::mt19937_64 seeded_rng(uint64_t seed, std::string_view salt) {
    return std::mt19937_64(hash_combine(seed, hash_str(salt)));
}

} // namespace prime::detail
