#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mdir/tensor.hpp"

namespace mdir {

// RGB float image in [0,1], planar CHW layout.
struct ImageF {
    std::int64_t height = 0;
    std::int64_t width = 0;
    std::vector<float> data;  // 3 * height * width

    static ImageF filled(std::int64_t h, std::int64_t w, float v) {
        return {h, w, std::vector<float>(static_cast<std::size_t>(3 * h * w), v)};
    }

    std::int64_t plane() const { return height * width; }
    float& at(int c, std::int64_t y, std::int64_t x) {
        return data[static_cast<std::size_t>(c * plane() + y * width + x)];
    }
    float at(int c, std::int64_t y, std::int64_t x) const {
        return data[static_cast<std::size_t>(c * plane() + y * width + x)];
    }

    Tensor to_tensor() const { return Tensor::from_vector({3, height, width}, data); }

    static ImageF from_tensor(const Tensor& t) {
        return {t.dim(1), t.dim(2), std::vector<float>(t.data(), t.data() + t.numel())};
    }

    void clip01() {
        for (auto& v : data) v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
    }
};

// 8-bit RGB PNG round trip. Quantization uses round(v*255) on clipped values.
ImageF load_png(const std::string& path);
void save_png(const std::string& path, const ImageF& img);

// encoded bytes without touching the filesystem (used for determinism checks)
std::vector<std::uint8_t> encode_png(const ImageF& img);

}  // namespace mdir
