#include "prime/guidance.hpp"

#include <algorithm>
#include <cmath>

namespace prime {

LatentImage extended_cfg(const LatentImage& eps_null, const LatentImage& eps_cf,
                         const LatentImage& eps_f, const LatentImage& eps_c, float s) {
    if (!eps_null.same_shape(eps_cf) || !eps_null.same_shape(eps_f) || !eps_null.same_shape(eps_c))
        throw dimension_error("extended_cfg: branch shapes differ");
    LatentImage out = eps_null;
    for (size_t i = 0; i < out.data.size(); ++i) {
        const float g = (eps_cf.data[i] - eps_f.data[i]) + (eps_cf.data[i] - eps_c.data[i]);
        out.data[i] = eps_null.data[i] + s * g;
    }
    return out;
}

LatentImage standard_cfg(const LatentImage& eps_null, const LatentImage& eps_c, float s) {
    if (!eps_null.same_shape(eps_c)) throw dimension_error("standard_cfg: branch shapes differ");
    LatentImage out = eps_null;
    for (size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = eps_null.data[i] + s * (eps_c.data[i] - eps_null.data[i]);
    }
    return out;
}

float SaliencyMap::total_mass() const {
    float sum = 0.0f;
    for (float v : values) sum += v;
    return sum;
}

SaliencyMap saliency_map(const LatentImage& eps_cf, const LatentImage& eps_c) {
    if (!eps_cf.same_shape(eps_c)) throw dimension_error("saliency_map: branch shapes differ");
    SaliencyMap map;
    map.height = eps_cf.height;
    map.width = eps_cf.width;
    map.values.assign(static_cast<size_t>(map.height) * map.width, 0.0f);
    for (int y = 0; y < map.height; ++y) {
        for (int x = 0; x < map.width; ++x) {
            double acc = 0.0;
            for (int c = 0; c < eps_cf.channels; ++c) {
                const double d = static_cast<double>(eps_cf.at(c, y, x)) - eps_c.at(c, y, x);
                acc += d * d;
            }
            map.values[static_cast<size_t>(y) * map.width + x] = static_cast<float>(std::sqrt(acc));
        }
    }
    return map;
}

SaliencyMap average_saliency(const std::vector<SaliencyMap>& maps) {
    if (maps.empty()) throw domain_error("average_saliency: empty step set");
    SaliencyMap out = maps[0];
    for (size_t i = 1; i < maps.size(); ++i) {
        if (maps[i].height != out.height || maps[i].width != out.width)
            throw dimension_error("average_saliency: map shapes differ");
        for (size_t j = 0; j < out.values.size(); ++j) out.values[j] += maps[i].values[j];
    }
    const float inv = 1.0f / static_cast<float>(maps.size());
    for (float& v : out.values) v *= inv;
    return out;
}

std::pair<float, float> rescale_unit(SaliencyMap& map) {
    if (map.values.empty()) throw domain_error("rescale_unit: empty map");
    auto [mn_it, mx_it] = std::minmax_element(map.values.begin(), map.values.end());
    const float mn = *mn_it, mx = *mx_it;
    const float span = mx - mn;
    for (float& v : map.values) v = span > 0.0f ? (v - mn) / span : 0.0f;
    return {mn, mx};
}

} // namespace prime
