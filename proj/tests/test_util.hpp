// Shared fixtures: procedural clean images for dataset synthesis in tests.
#pragma once

#include <cmath>
#include <filesystem>
#include <string>

#include "mdir/image.hpp"
#include "mdir/rng.hpp"

namespace testutil {

// Smooth color field with a few solid shapes and mild texture; enough
// structure for restoration and classification to have signal.
inline mdir::ImageF make_clean_image(std::uint64_t seed, std::int64_t size) {
    mdir::Rng rng(seed);
    mdir::ImageF img = mdir::ImageF::filled(size, size, 0.0f);
    double corner[4][3];
    for (auto& c : corner)
        for (auto& v : c) v = rng.uniform(0.1, 0.9);
    const double fx = rng.uniform(1.0, 3.0), fy = rng.uniform(1.0, 3.0);
    const double amp = rng.uniform(0.02, 0.08);
    for (std::int64_t y = 0; y < size; ++y)
        for (std::int64_t x = 0; x < size; ++x) {
            const double u = static_cast<double>(x) / static_cast<double>(size - 1);
            const double v = static_cast<double>(y) / static_cast<double>(size - 1);
            const double tex = amp * std::sin(2 * 3.14159265 * (fx * u + fy * v));
            for (int c = 0; c < 3; ++c) {
                const double top = corner[0][c] * (1 - u) + corner[1][c] * u;
                const double bot = corner[2][c] * (1 - u) + corner[3][c] * u;
                img.at(c, y, x) = static_cast<float>(std::clamp(top * (1 - v) + bot * v + tex, 0.0, 1.0));
            }
        }
    const int shapes = static_cast<int>(rng.uniform_int(2, 4));
    for (int s = 0; s < shapes; ++s) {
        const double cx = rng.uniform(0.1, 0.9) * size, cy = rng.uniform(0.1, 0.9) * size;
        const double r = rng.uniform(0.08, 0.22) * size;
        const bool disk = rng.uniform() < 0.5;
        float col[3];
        for (auto& v : col) v = static_cast<float>(rng.uniform(0.05, 0.95));
        for (std::int64_t y = 0; y < size; ++y)
            for (std::int64_t x = 0; x < size; ++x) {
                const double dx = x - cx, dy = y - cy;
                const bool inside = disk ? (dx * dx + dy * dy < r * r)
                                         : (std::abs(dx) < r && std::abs(dy) < 0.7 * r);
                if (inside)
                    for (int c = 0; c < 3; ++c) img.at(c, y, x) = col[c];
            }
    }
    return img;
}

inline std::string make_clean_dir(const std::string& dir, int n, std::int64_t size,
                                  std::uint64_t seed) {
    std::filesystem::create_directories(dir);
    for (int i = 0; i < n; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "clean%03d.png", i);
        mdir::save_png((std::filesystem::path(dir) / name).string(),
                       make_clean_image(seed + static_cast<std::uint64_t>(i), size));
    }
    return dir;
}

inline std::string fresh_dir(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p.string();
}

}  // namespace testutil
