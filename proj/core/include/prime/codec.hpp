#pragma once

#include <cstdint>

#include "prime/types.hpp"

namespace prime {

enum class CodecKind { identity, orthonormal_patchify };

// Exactly invertible pixel<->latent map; the identity default keeps
// background-preservation claims checkable to machine precision.
struct CodecConfig {
    CodecKind kind = CodecKind::identity;
    int patch_factor = 1;          // patchify only
    uint64_t rotation_seed = 17;   // patchify channel rotation

    int channel_out() const { return kind == CodecKind::identity ? 3 : 3 * patch_factor * patch_factor; }
    int spatial_factor() const { return kind == CodecKind::identity ? 1 : patch_factor; }
};

// identity: [0,1] -> [-1,1] rescale. patchify: space-to-depth by patch_factor
// followed by a fixed seeded orthonormal channel rotation.
LatentImage encode(const PixelImage& img, const CodecConfig& cfg);

// Exact inverse of encode up to floating rounding. The returned image is not
// clamped; clamping to [0,1] happens only at file-save time.
PixelImage decode(const LatentImage& z, const CodecConfig& cfg);

} // namespace prime
