#include "mdir/image.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <stdexcept>

#include <png.h>

namespace mdir {

namespace {

struct FileCloser {
    std::FILE* f;
    ~FileCloser() {
        if (f) std::fclose(f);
    }
};

std::vector<std::uint8_t> to_rgb8(const ImageF& img) {
    const std::int64_t hw = img.plane();
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(hw * 3));
    for (std::int64_t i = 0; i < hw; ++i)
        for (int c = 0; c < 3; ++c) {
            float v = img.data[static_cast<std::size_t>(c * hw + i)];
            v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
            rgb[static_cast<std::size_t>(i * 3 + c)] =
                static_cast<std::uint8_t>(std::lround(v * 255.0f));
        }
    return rgb;
}

}  // namespace

ImageF load_png(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw std::invalid_argument("load_png: cannot open " + path);
    FileCloser closer{f};

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("load_png: png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw std::runtime_error("load_png: png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::invalid_argument("load_png: failed to decode " + path);
    }
    png_init_io(png, f);
    png_read_info(png, info);

    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const png_byte color = png_get_color_type(png, info);
    const png_byte depth = png_get_bit_depth(png, info);

    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS))
        png_set_strip_alpha(png);
    png_read_update_info(png, info);

    std::vector<std::uint8_t> rows(static_cast<std::size_t>(h) * w * 3);
    std::vector<png_bytep> row_ptrs(h);
    for (png_uint_32 y = 0; y < h; ++y) row_ptrs[y] = rows.data() + static_cast<std::size_t>(y) * w * 3;
    png_read_image(png, row_ptrs.data());
    png_destroy_read_struct(&png, &info, nullptr);

    ImageF img;
    img.height = static_cast<std::int64_t>(h);
    img.width = static_cast<std::int64_t>(w);
    img.data.resize(static_cast<std::size_t>(3) * h * w);
    const std::int64_t hw = img.plane();
    for (std::int64_t i = 0; i < hw; ++i)
        for (int c = 0; c < 3; ++c)
            img.data[static_cast<std::size_t>(c * hw + i)] =
                static_cast<float>(rows[static_cast<std::size_t>(i * 3 + c)]) / 255.0f;
    return img;
}

namespace {

void write_png_impl(png_structp png, png_infop info, const ImageF& img) {
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height),
                 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const auto rgb = to_rgb8(img);
    for (std::int64_t y = 0; y < img.height; ++y)
        png_write_row(png, const_cast<png_bytep>(rgb.data() + y * img.width * 3));
    png_write_end(png, nullptr);
}

}  // namespace

void save_png(const std::string& path, const ImageF& img) {
    if (img.height <= 0 || img.width <= 0 ||
        static_cast<std::int64_t>(img.data.size()) != 3 * img.plane())
        throw std::invalid_argument("save_png: malformed image");
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw std::invalid_argument("save_png: cannot open " + path + " for writing");
    FileCloser closer{f};
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("save_png: png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("save_png: png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("save_png: encode failed for " + path);
    }
    png_init_io(png, f);
    write_png_impl(png, info, img);
    png_destroy_write_struct(&png, &info);
}

std::vector<std::uint8_t> encode_png(const ImageF& img) {
    std::vector<std::uint8_t> out;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("encode_png: png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("encode_png: png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("encode_png: encode failed");
    }
    png_set_write_fn(
        png, &out,
        [](png_structp p, png_bytep data, png_size_t len) {
            auto* buf = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(p));
            buf->insert(buf->end(), data, data + len);
        },
        [](png_structp) {});
    write_png_impl(png, info, img);
    png_destroy_write_struct(&png, &info);
    return out;
}

}  // namespace mdir
