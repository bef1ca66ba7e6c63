#include "prime/types.hpp"

#include <cmath>

namespace prime {

void PixelImage::validate() const {
    if (data.size() != static_cast<size_t>(width) * height * channels)
        throw dimension_error("pixel image data length does not match width*height*channels");
    for (float v : data) {
        if (!std::isfinite(v) || v < 0.0f || v > 1.0f)
            throw validation_error("pixel image value outside [0,1]");
    }
}

void LatentImage::validate() const {
    if (data.size() != static_cast<size_t>(channels) * height * width)
        throw dimension_error("latent data length does not match channels*height*width");
    for (float v : data) {
        if (!std::isfinite(v)) throw validation_error("latent contains non-finite value");
    }
}

std::string ResolutionTag::to_string() const {
    switch (kind) {
        case Kind::pixel:  return "pixel";
        case Kind::latent: return "latent";
        case Kind::attention: return "attention-level-" + std::to_string(level);
    }
    return "?";
}

size_t BinaryMask::popcount() const {
    size_t n = 0;
    for (uint8_t b : bits) n += b;
    return n;
}

void BinaryMask::validate() const {
    if (bits.size() != static_cast<size_t>(height) * width)
        throw dimension_error("mask bit count does not match height*width");
    for (uint8_t b : bits) {
        if (b != 0 && b != 1) throw validation_error("mask cell is not 0 or 1");
    }
}

bool mask_contained(const BinaryMask& inner, const BinaryMask& outer) {
    if (!inner.same_shape(outer)) throw dimension_error("mask containment check on mismatched shapes");
    for (size_t i = 0; i < inner.bits.size(); ++i) {
        if ((inner.bits[i] & outer.bits[i]) != inner.bits[i]) return false;
    }
    return true;
}

BinaryMask mask_xor(const BinaryMask& a, const BinaryMask& b) {
    if (!a.same_shape(b)) throw dimension_error("mask xor on mismatched shapes");
    BinaryMask out(a.height, a.width, 0, a.tag);
    for (size_t i = 0; i < a.bits.size(); ++i) out.bits[i] = a.bits[i] ^ b.bits[i];
    return out;
}

TokenIndexMap build_token_index_map(const BinaryMask& mask) {
    TokenIndexMap map;
    map.height = mask.height;
    map.width = mask.width;
    for (int i = 0; i < mask.height * mask.width; ++i) {
        if (mask.bits[i]) map.object_positions.push_back(i);
    }
    return map;
}

BinaryMask downsample_mask(const BinaryMask& mask, int factor) {
    if (factor < 1 || mask.height % factor != 0 || mask.width % factor != 0)
        throw dimension_error("downsample factor " + std::to_string(factor) +
                              " does not divide mask dims " + std::to_string(mask.height) + "x" +
                              std::to_string(mask.width));
    const int oh = mask.height / factor;
    const int ow = mask.width / factor;
    ResolutionTag tag = mask.tag;
    if (factor > 1) {
        tag.kind = ResolutionTag::Kind::attention;
        tag.level += static_cast<int>(std::lround(std::log2(static_cast<double>(factor))));
    }
    BinaryMask out(oh, ow, 0, tag);
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            if (mask.at(y, x)) out.at(y / factor, x / factor) = 1;
        }
    }
    return out;
}

ObjectSlice segment(const LatentImage& z, const BinaryMask& mask) {
    if (mask.height != z.height || mask.width != z.width)
        throw dimension_error("segment: mask resolution does not match latent spatial dims");
    ObjectSlice slice;
    slice.channels = z.channels;
    slice.values.reserve(mask.popcount() * z.channels);
    for (int y = 0; y < z.height; ++y) {
        for (int x = 0; x < z.width; ++x) {
            if (!mask.at(y, x)) continue;
            for (int c = 0; c < z.channels; ++c) slice.values.push_back(z.at(c, y, x));
        }
    }
    return slice;
}

LatentImage scatter(const ObjectSlice& slice, const BinaryMask& mask, const LatentImage& base) {
    if (mask.height != base.height || mask.width != base.width)
        throw dimension_error("scatter: mask resolution does not match latent spatial dims");
    if (slice.channels != 0 && slice.channels != base.channels)
        throw dimension_error("scatter: slice channel count does not match base");
    if (slice.count() != mask.popcount())
        throw dimension_error("scatter: slice length " + std::to_string(slice.count()) +
                              " does not match mask popcount " + std::to_string(mask.popcount()));
    LatentImage out = base;
    size_t k = 0;
    for (int y = 0; y < base.height; ++y) {
        for (int x = 0; x < base.width; ++x) {
            if (!mask.at(y, x)) continue;
            for (int c = 0; c < base.channels; ++c) out.at(c, y, x) = slice.values[k * base.channels + c];
            ++k;
        }
    }
    return out;
}

} // namespace prime
