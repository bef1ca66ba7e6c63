#include <algorithm>
#include <cmath>

#include "prime/denoiser.hpp"
#include "prime/detail/rng.hpp"

namespace prime {

// Colored flat background with 1-3 random rectangles and one disc; enough
// structure (edges, flat regions) for the eps objective to have signal.
PixelImage ShapesDataset::sample(long index) const {
    auto rng = detail::seeded_rng(seed, detail::hash_combine(0x73686170, static_cast<uint64_t>(index)));
    std::uniform_real_distribution<float> uf(0.0f, 1.0f);
    std::uniform_int_distribution<int> ucount(1, 3);

    PixelImage img(width, height, 3);
    float bg[3] = {uf(rng), uf(rng), uf(rng)};
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = bg[c];

    const int rects = ucount(rng);
    for (int r = 0; r < rects; ++r) {
        std::uniform_int_distribution<int> ux(0, width - 1), uy(0, height - 1);
        int x0 = ux(rng), x1 = ux(rng), y0 = uy(rng), y1 = uy(rng);
        if (x0 > x1) std::swap(x0, x1);
        if (y0 > y1) std::swap(y0, y1);
        float col[3] = {uf(rng), uf(rng), uf(rng)};
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x)
                for (int c = 0; c < 3; ++c) img.at(x, y, c) = col[c];
    }

    std::uniform_int_distribution<int> ux(0, width - 1), uy(0, height - 1);
    const int cx = ux(rng), cy = uy(rng);
    std::uniform_int_distribution<int> ur(1, std::max(2, std::min(width, height) / 4));
    const int rad = ur(rng);
    float col[3] = {uf(rng), uf(rng), uf(rng)};
    for (int y = std::max(0, cy - rad); y <= std::min(height - 1, cy + rad); ++y) {
        for (int x = std::max(0, cx - rad); x <= std::min(width - 1, cx + rad); ++x) {
            if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= rad * rad)
                for (int c = 0; c < 3; ++c) img.at(x, y, c) = col[c];
        }
    }
    return img;
}

} // namespace prime
