#include "prime/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include <png.h>

namespace prime {

namespace {

bool has_suffix(const std::string& s, const std::string& suf) {
    if (s.size() < suf.size()) return false;
    return std::equal(suf.rbegin(), suf.rend(), s.rbegin(),
                      [](char a, char b) { return std::tolower(a) == std::tolower(b); });
}

uint8_t to_byte(float v) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<uint8_t>(std::lround(c * 255.0f));
}

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

PixelImage load_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw io_error("cannot open image file: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw io_error("libpng init failed reading " + path);
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw io_error("libpng info init failed reading " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw io_error("malformed PNG file: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    png_set_strip_16(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_set_interlace_handling(png);
    png_read_update_info(png, info);

    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    std::vector<uint8_t> rows(static_cast<size_t>(w) * h * 3);
    std::vector<png_bytep> row_ptrs(h);
    for (int y = 0; y < h; ++y) row_ptrs[y] = rows.data() + static_cast<size_t>(y) * w * 3;
    png_read_image(png, row_ptrs.data());
    png_destroy_read_struct(&png, &info, nullptr);

    PixelImage img(w, h, 3);
    for (size_t i = 0; i < rows.size(); ++i) img.data[i] = static_cast<float>(rows[i]) / 255.0f;
    return img;
}

void save_png(const PixelImage& img, const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw io_error("cannot write image file: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw io_error("libpng init failed writing " + path);
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw io_error("libpng info init failed writing " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw io_error("PNG write failed: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<uint8_t> row(static_cast<size_t>(img.width) * 3);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) row[static_cast<size_t>(x) * 3 + c] = to_byte(img.at(x, y, c));
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// Skips PNM whitespace and # comments.
int pnm_next_int(std::istream& in, const std::string& path) {
    while (in) {
        const int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            break;
        }
    }
    int v = -1;
    in >> v;
    if (!in || v < 0) throw io_error("malformed PNM header in " + path);
    return v;
}

PixelImage load_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open image file: " + path);
    std::string magic;
    in >> magic;
    if (magic != "P6") throw io_error("unsupported PPM magic '" + magic + "' in " + path);
    const int w = pnm_next_int(in, path);
    const int h = pnm_next_int(in, path);
    const int maxval = pnm_next_int(in, path);
    if (maxval != 255) throw io_error("only maxval 255 PPM supported: " + path);
    in.get(); // single whitespace after header

    std::vector<uint8_t> buf(static_cast<size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!in) throw io_error("truncated PPM data in " + path);

    PixelImage img(w, h, 3);
    for (size_t i = 0; i < buf.size(); ++i) img.data[i] = static_cast<float>(buf[i]) / 255.0f;
    return img;
}

void save_ppm(const PixelImage& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write image file: " + path);
    out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
    std::vector<uint8_t> buf(img.size());
    for (size_t i = 0; i < buf.size(); ++i) buf[i] = to_byte(img.data[i]);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw io_error("short write saving " + path);
}

} // namespace

PixelImage load_image(const std::string& path) {
    PixelImage img;
    if (has_suffix(path, ".png")) img = load_png(path);
    else if (has_suffix(path, ".ppm")) img = load_ppm(path);
    else throw io_error("unsupported image extension (want .png or .ppm): " + path);
    img.validate();
    return img;
}

void save_image(const PixelImage& img, const std::string& path) {
    if (has_suffix(path, ".png")) save_png(img, path);
    else if (has_suffix(path, ".ppm")) save_ppm(img, path);
    else throw io_error("unsupported image extension (want .png or .ppm): " + path);
}

BinaryMask load_mask_pgm(const std::string& path, int threshold) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open mask file: " + path);
    std::string magic;
    in >> magic;
    if (magic != "P5" && magic != "P2") throw io_error("unsupported PGM magic '" + magic + "' in " + path);
    const int w = pnm_next_int(in, path);
    const int h = pnm_next_int(in, path);
    const int maxval = pnm_next_int(in, path);
    if (maxval <= 0 || maxval > 255) throw io_error("unsupported PGM maxval in " + path);

    BinaryMask mask(h, w, 0, {ResolutionTag::Kind::pixel, 0});
    if (magic == "P5") {
        in.get();
        std::vector<uint8_t> buf(static_cast<size_t>(w) * h);
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (!in) throw io_error("truncated PGM data in " + path);
        for (size_t i = 0; i < buf.size(); ++i) mask.bits[i] = buf[i] >= threshold ? 1 : 0;
    } else {
        for (size_t i = 0; i < mask.bits.size(); ++i) {
            const int v = pnm_next_int(in, path);
            mask.bits[i] = v >= threshold ? 1 : 0;
        }
    }
    return mask;
}

void save_mask_pgm(const BinaryMask& mask, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write mask file: " + path);
    out << "P5\n" << mask.width << ' ' << mask.height << "\n255\n";
    std::vector<uint8_t> buf(mask.bits.size());
    for (size_t i = 0; i < buf.size(); ++i) buf[i] = mask.bits[i] ? 255 : 0;
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw io_error("short write saving " + path);
}

void save_grayscale_png(const std::vector<float>& values, int height, int width,
                        const std::string& path) {
    if (values.size() != static_cast<size_t>(height) * width)
        throw dimension_error("save_grayscale_png: value count does not match dims");
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw io_error("cannot write image file: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw io_error("libpng init failed writing " + path);
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw io_error("libpng info init failed writing " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw io_error("PNG write failed: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<uint8_t> row(width);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) row[x] = to_byte(values[static_cast<size_t>(y) * width + x]);
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

} // namespace prime
