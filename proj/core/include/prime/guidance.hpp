#pragma once

#include <vector>

#include "prime/types.hpp"

namespace prime {

struct GuidanceConfig {
    float scale = 2.5f; // s > 0

    void validate() const {
        if (!(scale > 0.0f)) throw config_error("guidance scale must be > 0");
    }
};

// eps(null) + s*[(eps(c,f) - eps(f)) + (eps(c,f) - eps(c))], cellwise.
LatentImage extended_cfg(const LatentImage& eps_null, const LatentImage& eps_cf,
                         const LatentImage& eps_f, const LatentImage& eps_c, float s);

// eps(null) + s*(eps(c) - eps(null)).
LatentImage standard_cfg(const LatentImage& eps_null, const LatentImage& eps_c, float s);

// Per-cell L2 magnitude over channels of a latent-shaped difference grid.
struct SaliencyMap {
    int height = 0;
    int width = 0;
    std::vector<float> values; // h*w, raster order

    float total_mass() const;
};

// Magnitude of eps(c,f) - eps(c) per spatial cell.
SaliencyMap saliency_map(const LatentImage& eps_cf, const LatentImage& eps_c);

// Cellwise arithmetic mean; the step set must be nonempty.
SaliencyMap average_saliency(const std::vector<SaliencyMap>& maps);

// Min-max rescale to [0,1] for export; returns the raw (min, max) range.
std::pair<float, float> rescale_unit(SaliencyMap& map);

} // namespace prime
