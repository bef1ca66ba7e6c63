#pragma once

// Shared helpers and generators for the unit tests. Oracles that check spec
// behaviour live next to the tests that use them, independent of the library
// code paths they verify.

#include <random>

#include "prime/denoiser.hpp"
#include "prime/detail/rng.hpp"
#include "prime/types.hpp"

namespace testsup {

inline std::mt19937_64 rng(uint64_t seed) { return std::mt19937_64(seed); }

inline prime::LatentImage random_latent(std::mt19937_64& g, int c, int h, int w, float scale = 1.0f) {
    std::normal_distribution<float> dist(0.0f, scale);
    prime::LatentImage z(c, h, w);
    for (float& v : z.data) v = dist(g);
    return z;
}

inline prime::PixelImage random_image(std::mt19937_64& g, int w, int h) {
    std::uniform_real_distribution<float> dist(0.0f, 1.0f);
    prime::PixelImage img(w, h, 3);
    for (float& v : img.data) v = dist(g);
    return img;
}

inline prime::BinaryMask random_mask(std::mt19937_64& g, int h, int w, double density = 0.4) {
    std::bernoulli_distribution bit(density);
    prime::BinaryMask m(h, w, 0, {prime::ResolutionTag::Kind::latent, 0});
    for (auto& b : m.bits) b = bit(g) ? 1 : 0;
    return m;
}

// Nested rectangles: object strictly inside foreground, ring nonempty.
inline std::pair<prime::BinaryMask, prime::BinaryMask> ring_masks(std::mt19937_64& g, int h, int w) {
    std::uniform_int_distribution<int> ux(1, w / 2 - 1), uy(1, h / 2 - 1);
    const int fx0 = ux(g), fy0 = uy(g);
    std::uniform_int_distribution<int> ux1(w / 2 + 1, w - 2), uy1(h / 2 + 1, h - 2);
    const int fx1 = ux1(g), fy1 = uy1(g);
    prime::BinaryMask fg(h, w, 0, {prime::ResolutionTag::Kind::pixel, 0});
    prime::BinaryMask obj(h, w, 0, {prime::ResolutionTag::Kind::pixel, 0});
    for (int y = fy0; y <= fy1; ++y)
        for (int x = fx0; x <= fx1; ++x) fg.at(y, x) = 1;
    for (int y = fy0 + 1; y <= fy1 - 1; ++y)
        for (int x = fx0 + 1; x <= fx1 - 1; ++x) obj.at(y, x) = 1;
    return {obj, fg};
}

inline double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
    double m = 0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
    return m;
}

inline double rel_l2(const std::vector<float>& a, const std::vector<float>& b) {
    double num = 0, den = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = double(a[i]) - double(b[i]);
        num += d * d;
        den += double(b[i]) * double(b[i]);
    }
    return std::sqrt(num / den);
}

inline prime::DenoiserConfig tiny_denoiser(uint64_t seed = 21) {
    prime::DenoiserConfig cfg;
    cfg.base_width = 16;
    cfg.d_ctx = 16;
    cfg.time_dim = 32;
    cfg.weight_seed = seed;
    return cfg;
}

} // namespace testsup
