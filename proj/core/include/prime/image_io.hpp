#pragma once

#include <string>
#include <vector>

#include "prime/types.hpp"

namespace prime {

// PNG (8-bit RGB; gray/RGBA converted on read) and binary PPM, chosen by
// file extension. Values are validated to [0,1] on load and clamped on save.
PixelImage load_image(const std::string& path);
void save_image(const PixelImage& img, const std::string& path);

// PGM masks (P5 or P2), thresholded at 128 of 255 on load.
BinaryMask load_mask_pgm(const std::string& path, int threshold = 128);
void save_mask_pgm(const BinaryMask& mask, const std::string& path);

// 8-bit grayscale PNG from values in [0,1] (attention and saliency dumps).
void save_grayscale_png(const std::vector<float>& values, int height, int width,
                        const std::string& path);

} // namespace prime
