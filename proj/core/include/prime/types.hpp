#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "prime/errors.hpp"

namespace prime {

// 8-bit-file-backed RGB image held as floats in [0,1], row-major HWC.
struct PixelImage {
    int width = 0;
    int height = 0;
    int channels = 3;
    std::vector<float> data;

    PixelImage() = default;
    PixelImage(int w, int h, int c = 3, float fill = 0.0f)
        : width(w), height(h), channels(c), data(static_cast<size_t>(w) * h * c, fill) {}

    float& at(int x, int y, int c) { return data[(static_cast<size_t>(y) * width + x) * channels + c]; }
    float at(int x, int y, int c) const { return data[(static_cast<size_t>(y) * width + x) * channels + c]; }
    size_t size() const { return data.size(); }

    // Every value must be finite and within [0,1]; enforced on load and save.
    void validate() const;
};

// Latent grid flowing through inversion/sampling/combining, channel-major CHW.
struct LatentImage {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<float> data;
    std::optional<int> timestep_tag;

    LatentImage() = default;
    LatentImage(int c, int h, int w, float fill = 0.0f)
        : channels(c), height(h), width(w), data(static_cast<size_t>(c) * h * w, fill) {}

    float& at(int c, int y, int x) { return data[(static_cast<size_t>(c) * height + y) * width + x]; }
    float at(int c, int y, int x) const { return data[(static_cast<size_t>(c) * height + y) * width + x]; }
    size_t size() const { return data.size(); }
    bool same_shape(const LatentImage& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }

    void validate() const; // all values finite
};

struct ResolutionTag {
    enum class Kind { pixel, latent, attention };
    Kind kind = Kind::pixel;
    int level = 0; // meaningful for attention-level-k tags

    std::string to_string() const;
};

// {0,1} grid at pixel, latent, or per-attention-level resolution.
struct BinaryMask {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> bits;
    ResolutionTag tag;

    BinaryMask() = default;
    BinaryMask(int h, int w, uint8_t fill = 0, ResolutionTag t = {})
        : height(h), width(w), bits(static_cast<size_t>(h) * w, fill), tag(t) {}

    uint8_t& at(int y, int x) { return bits[static_cast<size_t>(y) * width + x]; }
    uint8_t at(int y, int x) const { return bits[static_cast<size_t>(y) * width + x]; }
    size_t popcount() const;
    bool same_shape(const BinaryMask& o) const { return height == o.height && width == o.width; }

    void validate() const; // every cell exactly 0 or 1
};

// True iff inner AND outer == inner, i.e. inner is contained in outer.
bool mask_contained(const BinaryMask& inner, const BinaryMask& outer);

// Cells where a != b (the transition ring when applied to M^fg, M^obj).
BinaryMask mask_xor(const BinaryMask& a, const BinaryMask& b);

// Ordered list of per-position channel vectors gathered at mask=1 cells.
struct ObjectSlice {
    int channels = 0;
    std::vector<float> values; // count() * channels, raster order

    size_t count() const { return channels == 0 ? 0 : values.size() / channels; }
};

// Flattened attention-token positions of the object at one spatial resolution.
struct TokenIndexMap {
    int height = 0;
    int width = 0;
    std::vector<int> object_positions; // strictly increasing, each < height*width

    int n() const { return static_cast<int>(object_positions.size()); }
    int tokens() const { return height * width; }
};

TokenIndexMap build_token_index_map(const BinaryMask& mask);

// OR-pooling: output cell = 1 iff any covered input cell = 1.
BinaryMask downsample_mask(const BinaryMask& mask, int factor);

ObjectSlice segment(const LatentImage& z, const BinaryMask& mask);

LatentImage scatter(const ObjectSlice& slice, const BinaryMask& mask, const LatentImage& base);

} // namespace prime
