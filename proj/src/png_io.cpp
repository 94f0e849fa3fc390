#include "lcco/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <vector>

#include "lcco/errors.hpp"

namespace lcco::png {

namespace {
struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct PngReader {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngReader() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    }
};

struct PngWriter {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngWriter() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    }
};

// Decodes to packed 8-bit rows with `channels` samples per pixel.
std::vector<unsigned char> decode(const std::string& path, int channels, int& w, int& h) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw DataError("cannot open PNG: " + path);
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8))
        throw DataError("not a PNG file: " + path);

    PngReader r;
    r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!r.png) throw DataError("libpng init failed");
    r.info = png_create_info_struct(r.png);
    if (!r.info) throw DataError("libpng init failed");
    if (setjmp(png_jmpbuf(r.png))) throw DataError("PNG decode failed: " + path);

    png_init_io(r.png, fp.get());
    png_set_sig_bytes(r.png, 8);
    png_read_info(r.png, r.info);

    png_byte color = png_get_color_type(r.png, r.info);
    png_byte depth = png_get_bit_depth(r.png, r.info);
    if (depth == 16) png_set_strip_16(r.png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(r.png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(r.png);
    if (png_get_valid(r.png, r.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(r.png);
    png_set_strip_alpha(r.png);
    if (channels == 3) {
        if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
            png_set_gray_to_rgb(r.png);
    } else {
        if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
            color == PNG_COLOR_TYPE_PALETTE)
            png_set_rgb_to_gray_fixed(r.png, 1, -1, -1);
    }
    png_read_update_info(r.png, r.info);

    w = static_cast<int>(png_get_image_width(r.png, r.info));
    h = static_cast<int>(png_get_image_height(r.png, r.info));
    size_t rowbytes = png_get_rowbytes(r.png, r.info);
    if (rowbytes != static_cast<size_t>(w) * channels)
        throw DataError("unexpected PNG row layout: " + path);

    std::vector<unsigned char> pixels(static_cast<size_t>(h) * rowbytes);
    std::vector<png_bytep> rows(static_cast<size_t>(h));
    for (int y = 0; y < h; ++y) rows[static_cast<size_t>(y)] = pixels.data() + y * rowbytes;
    png_read_image(r.png, rows.data());
    png_read_end(r.png, nullptr);
    return pixels;
}

void encode(const std::string& path, const unsigned char* pixels, int w, int h, int channels) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw DataError("cannot write PNG: " + path);
    PngWriter wri;
    wri.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!wri.png) throw DataError("libpng init failed");
    wri.info = png_create_info_struct(wri.png);
    if (!wri.info) throw DataError("libpng init failed");
    if (setjmp(png_jmpbuf(wri.png))) throw DataError("PNG encode failed: " + path);

    png_init_io(wri.png, fp.get());
    png_set_IHDR(wri.png, wri.info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(wri.png, wri.info);
    std::vector<png_bytep> rows(static_cast<size_t>(h));
    for (int y = 0; y < h; ++y)
        rows[static_cast<size_t>(y)] =
            const_cast<png_bytep>(pixels + static_cast<size_t>(y) * w * channels);
    png_write_image(wri.png, rows.data());
    png_write_end(wri.png, nullptr);
}

unsigned char to_byte(double v) {
    double s = std::lround(std::min(1.0, std::max(0.0, v)) * 255.0);
    return static_cast<unsigned char>(s);
}
}  // namespace

Tensor read_rgb(const std::string& path) {
    int w = 0, h = 0;
    auto pixels = decode(path, 3, w, h);
    Tensor img({3, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at3(c, y, x) = pixels[(static_cast<size_t>(y) * w + x) * 3 + c] / 255.0;
    return img;
}

Tensor read_gray(const std::string& path) {
    int w = 0, h = 0;
    auto pixels = decode(path, 1, w, h);
    Tensor img({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            img.at2(y, x) = pixels[static_cast<size_t>(y) * w + x] / 255.0;
    return img;
}

void write_rgb(const std::string& path, const Tensor& img) {
    if (img.rank() != 3 || img.dim(0) != 3) throw DataError("write_rgb: expected [3,H,W]");
    int h = img.dim(1), w = img.dim(2);
    std::vector<unsigned char> pixels(static_cast<size_t>(h) * w * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                pixels[(static_cast<size_t>(y) * w + x) * 3 + c] = to_byte(img.at3(c, y, x));
    encode(path, pixels.data(), w, h, 3);
}

void write_gray(const std::string& path, const Tensor& img) {
    if (img.rank() != 2) throw DataError("write_gray: expected [H,W]");
    int h = img.dim(0), w = img.dim(1);
    std::vector<unsigned char> pixels(static_cast<size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) pixels[static_cast<size_t>(y) * w + x] = to_byte(img.at2(y, x));
    encode(path, pixels.data(), w, h, 1);
}

}  // namespace lcco::png
