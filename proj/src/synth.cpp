#include "mdir/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include "mdir/rng.hpp"
#include "mdir/tensor.hpp"

namespace fs = std::filesystem;

namespace mdir {

namespace {

constexpr double kIlluminationFloor = 0.05;

float clip01f(double v) { return static_cast<float>(v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v)); }

// clipped-window box mean via integral image, double accumulation
std::vector<double> box_mean(const std::vector<double>& src, std::int64_t h, std::int64_t w,
                             std::int64_t r) {
    std::vector<double> integral(static_cast<std::size_t>((h + 1) * (w + 1)), 0.0);
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x)
            integral[static_cast<std::size_t>((y + 1) * (w + 1) + x + 1)] =
                src[static_cast<std::size_t>(y * w + x)] +
                integral[static_cast<std::size_t>(y * (w + 1) + x + 1)] +
                integral[static_cast<std::size_t>((y + 1) * (w + 1) + x)] -
                integral[static_cast<std::size_t>(y * (w + 1) + x)];
    std::vector<double> out(static_cast<std::size_t>(h * w));
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
            const std::int64_t y0 = std::max<std::int64_t>(0, y - r), y1 = std::min(h - 1, y + r);
            const std::int64_t x0 = std::max<std::int64_t>(0, x - r), x1 = std::min(w - 1, x + r);
            const double sum = integral[static_cast<std::size_t>((y1 + 1) * (w + 1) + x1 + 1)] -
                               integral[static_cast<std::size_t>(y0 * (w + 1) + x1 + 1)] -
                               integral[static_cast<std::size_t>((y1 + 1) * (w + 1) + x0)] +
                               integral[static_cast<std::size_t>(y0 * (w + 1) + x0)];
            out[static_cast<std::size_t>(y * w + x)] =
                sum / static_cast<double>((y1 - y0 + 1) * (x1 - x0 + 1));
        }
    return out;
}

}  // namespace

void DegradationSpec::validate() const {
    if (types.empty()) throw std::invalid_argument("degradation spec: empty type set");
    for (const auto& t : types)
        if (t != "rain" && t != "snow" && t != "haze" && t != "noise")
            throw std::invalid_argument("degradation spec: unknown type '" + t + "'");
    const std::string cat = category();
    for (const auto& c : all_categories())
        if (c == cat) return;
    throw std::invalid_argument("degradation spec: unsupported combination '" + cat + "'");
}

std::string DegradationSpec::category() const {
    // canonical application order: rain -> haze -> noise; snow stands alone
    std::string out;
    for (const char* t : {"rain", "haze", "noise", "snow"}) {
        if (std::find(types.begin(), types.end(), t) != types.end()) {
            if (!out.empty()) out += "_";
            out += t;
        }
    }
    return out;
}

const std::vector<std::string>& all_categories() {
    static const std::vector<std::string> cats = {"haze",      "haze_noise",      "noise", "rain",
                                                  "rain_haze", "rain_haze_noise", "snow"};
    return cats;
}

std::string report_label(const std::string& category) {
    if (category == "haze_noise") return "h+n";
    if (category == "rain_haze") return "r+h";
    if (category == "rain_haze_noise") return "r+h+n";
    return category;
}

std::set<std::string> category_types(const std::string& category) {
    std::set<std::string> out;
    std::string token;
    for (char c : category + "_") {
        if (c == '_') {
            if (!token.empty()) out.insert(token);
            token.clear();
        } else {
            token += c;
        }
    }
    return out;
}

std::vector<float> guided_filter(const std::vector<float>& guide, const std::vector<float>& src,
                                 std::int64_t h, std::int64_t w, std::int64_t radius, double eps) {
    if (guide.size() != src.size() || static_cast<std::int64_t>(src.size()) != h * w)
        throw std::invalid_argument("guided_filter: size mismatch");
    const std::size_t n = src.size();
    std::vector<double> g(n), p(n), gg(n), gp(n);
    for (std::size_t i = 0; i < n; ++i) {
        g[i] = static_cast<double>(guide[i]);
        p[i] = static_cast<double>(src[i]);
        gg[i] = g[i] * g[i];
        gp[i] = g[i] * p[i];
    }
    const auto mean_g = box_mean(g, h, w, radius);
    const auto mean_p = box_mean(p, h, w, radius);
    const auto mean_gg = box_mean(gg, h, w, radius);
    const auto mean_gp = box_mean(gp, h, w, radius);
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double var_g = mean_gg[i] - mean_g[i] * mean_g[i];
        const double cov_gp = mean_gp[i] - mean_g[i] * mean_p[i];
        a[i] = cov_gp / (var_g + eps);
        b[i] = mean_p[i] - a[i] * mean_g[i];
    }
    const auto mean_a = box_mean(a, h, w, radius);
    const auto mean_b = box_mean(b, h, w, radius);
    std::vector<float> out(n);
    for (std::size_t i = 0; i < n; ++i)
        out[i] = static_cast<float>(mean_a[i] * g[i] + mean_b[i]);
    return out;
}

std::vector<float> illumination_map(const ImageF& img) {
    const std::int64_t hw = img.plane();
    std::vector<float> luma(static_cast<std::size_t>(hw)), maxc(static_cast<std::size_t>(hw));
    for (std::int64_t i = 0; i < hw; ++i) {
        const float r = img.data[static_cast<std::size_t>(i)];
        const float g = img.data[static_cast<std::size_t>(hw + i)];
        const float b = img.data[static_cast<std::size_t>(2 * hw + i)];
        luma[static_cast<std::size_t>(i)] = 0.299f * r + 0.587f * g + 0.114f * b;
        maxc[static_cast<std::size_t>(i)] = std::max(r, std::max(g, b));
    }
    std::vector<float> l = guided_filter(luma, maxc, img.height, img.width, 8, 1e-3);
    for (auto& v : l) v = static_cast<float>(std::clamp(static_cast<double>(v), kIlluminationFloor, 1.0));
    return l;
}

std::vector<float> depth_map(std::int64_t h, std::int64_t w, std::uint64_t seed) {
    Rng rng(seed);
    constexpr std::int64_t kGrid = 4;
    std::vector<double> grid(kGrid * kGrid);
    for (auto& v : grid) v = rng.uniform();
    std::vector<float> d(static_cast<std::size_t>(h * w));
    double lo = 1e30, hi = -1e30;
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
            // bilinear sample of the low-frequency grid
            const double gy = (h > 1) ? static_cast<double>(y) / static_cast<double>(h - 1) * (kGrid - 1) : 0.0;
            const double gx = (w > 1) ? static_cast<double>(x) / static_cast<double>(w - 1) * (kGrid - 1) : 0.0;
            const std::int64_t iy = std::min<std::int64_t>(kGrid - 2, static_cast<std::int64_t>(gy));
            const std::int64_t ix = std::min<std::int64_t>(kGrid - 2, static_cast<std::int64_t>(gx));
            const double fy = gy - static_cast<double>(iy), fx = gx - static_cast<double>(ix);
            const double n00 = grid[static_cast<std::size_t>(iy * kGrid + ix)];
            const double n01 = grid[static_cast<std::size_t>(iy * kGrid + ix + 1)];
            const double n10 = grid[static_cast<std::size_t>((iy + 1) * kGrid + ix)];
            const double n11 = grid[static_cast<std::size_t>((iy + 1) * kGrid + ix + 1)];
            const double noise = (n00 * (1 - fx) + n01 * fx) * (1 - fy) + (n10 * (1 - fx) + n11 * fx) * fy;
            const double grad = (h > 1) ? static_cast<double>(y) / static_cast<double>(h - 1) : 0.0;
            const double v = 0.65 * grad + 0.35 * noise;
            d[static_cast<std::size_t>(y * w + x)] = static_cast<float>(v);
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    const double range = hi - lo;
    for (auto& v : d)
        v = range > 1e-12 ? static_cast<float>((static_cast<double>(v) - lo) / range) : 0.0f;
    return d;
}

std::vector<float> rain_mask(std::int64_t h, std::int64_t w, std::uint64_t seed, double coverage) {
    Rng rng(seed);
    std::vector<float> field(static_cast<std::size_t>(h * w), 0.0f);
    const std::int64_t target = std::max<std::int64_t>(1, static_cast<std::int64_t>(
                                    std::llround(coverage * static_cast<double>(h * w))));
    const double pi = 3.14159265358979323846;

    auto covered = [&](const std::vector<float>& m) {
        std::int64_t n = 0;
        for (float v : m) n += (v >= 0.5f);
        return n;
    };
    auto binarized = [&]() {
        // directional 3-tap smear happens per streak; binarize the whole field
        std::vector<float> m(field.size());
        for (std::size_t i = 0; i < field.size(); ++i) m[i] = field[i] >= 0.5f ? 1.0f : 0.0f;
        return m;
    };

    std::vector<float> mask = binarized();
    for (int iter = 0; iter < 4096 && covered(mask) < target; ++iter) {
        const double x0 = rng.uniform(0.0, static_cast<double>(w - 1));
        const double y0 = rng.uniform(0.0, static_cast<double>(h - 1));
        const double len = rng.uniform(8.0, 24.0);
        const double angle = rng.uniform(70.0, 110.0) * pi / 180.0;  // from horizontal
        const double dx = std::cos(angle), dy = std::sin(angle);
        const double x1 = x0 + len * dx, y1 = y0 + len * dy;

        const std::int64_t bx0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(std::min(x0, x1))) - 2);
        const std::int64_t bx1 = std::min<std::int64_t>(w - 1, static_cast<std::int64_t>(std::ceil(std::max(x0, x1))) + 2);
        const std::int64_t by0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(std::min(y0, y1))) - 2);
        const std::int64_t by1 = std::min<std::int64_t>(h - 1, static_cast<std::int64_t>(std::ceil(std::max(y0, y1))) + 2);

        // anti-aliased 1 px line, then a 3-tap smear along the streak direction
        std::vector<float> streak(field.size(), 0.0f);
        for (std::int64_t y = by0; y <= by1; ++y)
            for (std::int64_t x = bx0; x <= bx1; ++x) {
                const double px = static_cast<double>(x) - x0, py = static_cast<double>(y) - y0;
                double t = (px * dx + py * dy);
                t = std::clamp(t, 0.0, len);
                const double ddx = px - t * dx, ddy = py - t * dy;
                const double dist = std::sqrt(ddx * ddx + ddy * ddy);
                const double v = std::clamp(1.3 - dist, 0.0, 1.0);
                if (v > 0) streak[static_cast<std::size_t>(y * w + x)] = static_cast<float>(v);
            }
        const std::int64_t ox = static_cast<std::int64_t>(std::lround(dx));
        const std::int64_t oy = static_cast<std::int64_t>(std::lround(dy));
        for (std::int64_t y = by0; y <= by1; ++y)
            for (std::int64_t x = bx0; x <= bx1; ++x) {
                double acc = streak[static_cast<std::size_t>(y * w + x)];
                int taps = 1;
                if (y - oy >= 0 && y - oy < h && x - ox >= 0 && x - ox < w) {
                    acc += streak[static_cast<std::size_t>((y - oy) * w + (x - ox))];
                    ++taps;
                }
                if (y + oy >= 0 && y + oy < h && x + ox >= 0 && x + ox < w) {
                    acc += streak[static_cast<std::size_t>((y + oy) * w + (x + ox))];
                    ++taps;
                }
                const float v = static_cast<float>(acc / taps);
                auto& dst = field[static_cast<std::size_t>(y * w + x)];
                dst = std::max(dst, v);
            }
        mask = binarized();
    }
    return mask;
}

std::vector<float> snow_mask(std::int64_t h, std::int64_t w, std::uint64_t seed, double density) {
    Rng rng(seed);
    std::vector<float> mask(static_cast<std::size_t>(h * w), 0.0f);
    const std::int64_t flakes = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::llround(
                                    density * static_cast<double>(h * w))));
    std::vector<double> cx, cy, cr;
    for (std::int64_t f = 0; f < flakes; ++f) {
        double x = 0, y = 0, r = 0;
        bool placed = false;
        for (int tries = 0; tries < 100 && !placed; ++tries) {
            x = rng.uniform(0.0, static_cast<double>(w - 1));
            y = rng.uniform(0.0, static_cast<double>(h - 1));
            r = rng.uniform(1.0, 4.0);
            placed = true;
            for (std::size_t j = 0; j < cx.size(); ++j) {
                const double dx = x - cx[j], dy = y - cy[j];
                if (std::sqrt(dx * dx + dy * dy) < r + cr[j] + 1.5) {
                    placed = false;
                    break;
                }
            }
        }
        if (!placed) continue;
        cx.push_back(x);
        cy.push_back(y);
        cr.push_back(r);
        const std::int64_t bx0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(x - r) - 1);
        const std::int64_t bx1 = std::min<std::int64_t>(w - 1, static_cast<std::int64_t>(x + r) + 1);
        const std::int64_t by0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(y - r) - 1);
        const std::int64_t by1 = std::min<std::int64_t>(h - 1, static_cast<std::int64_t>(y + r) + 1);
        for (std::int64_t py = by0; py <= by1; ++py)
            for (std::int64_t px = bx0; px <= bx1; ++px) {
                const double dx = static_cast<double>(px) - x, dy = static_cast<double>(py) - y;
                const double v = std::clamp(r + 0.5 - std::sqrt(dx * dx + dy * dy), 0.0, 1.0);
                auto& dst = mask[static_cast<std::size_t>(py * w + px)];
                dst = std::max(dst, static_cast<float>(v));
            }
    }
    return mask;
}

ImageF apply_noise(const ImageF& img, const std::vector<float>& illumination, double alpha,
                   double sigma, std::uint64_t noise_seed) {
    if (static_cast<std::int64_t>(illumination.size()) != img.plane())
        throw std::invalid_argument("apply_noise: illumination map size mismatch");
    Rng rng(noise_seed);
    ImageF out = img;
    const std::int64_t hw = img.plane();
    for (int c = 0; c < 3; ++c)
        for (std::int64_t i = 0; i < hw; ++i) {
            const double l = static_cast<double>(illumination[static_cast<std::size_t>(i)]);
            const double base = static_cast<double>(img.data[static_cast<std::size_t>(c * hw + i)]) / l *
                                std::pow(l, alpha);
            const double n = sigma > 0.0 ? rng.normal(0.0, sigma) : 0.0;
            out.data[static_cast<std::size_t>(c * hw + i)] = clip01f(base + n);
        }
    return out;
}

ImageF apply_haze(const ImageF& img, const std::vector<float>& depth, double beta, double atmos_a) {
    if (static_cast<std::int64_t>(depth.size()) != img.plane())
        throw std::invalid_argument("apply_haze: depth map size mismatch");
    ImageF out = img;
    const std::int64_t hw = img.plane();
    for (std::int64_t i = 0; i < hw; ++i) {
        const double t = std::exp(-beta * static_cast<double>(depth[static_cast<std::size_t>(i)]));
        for (int c = 0; c < 3; ++c) {
            const double v = static_cast<double>(img.data[static_cast<std::size_t>(c * hw + i)]);
            out.data[static_cast<std::size_t>(c * hw + i)] = static_cast<float>(v * t + atmos_a * (1.0 - t));
        }
    }
    return out;
}

ImageF apply_rain(const ImageF& img, const std::vector<float>& mask) {
    if (static_cast<std::int64_t>(mask.size()) != img.plane())
        throw std::invalid_argument("apply_rain: mask size mismatch");
    ImageF out = img;
    const std::int64_t hw = img.plane();
    for (int c = 0; c < 3; ++c)
        for (std::int64_t i = 0; i < hw; ++i)
            out.data[static_cast<std::size_t>(c * hw + i)] = clip01f(
                static_cast<double>(img.data[static_cast<std::size_t>(c * hw + i)]) +
                static_cast<double>(mask[static_cast<std::size_t>(i)]));
    return out;
}

ImageF apply_snow(const ImageF& img, const std::vector<float>& mask, double intensity) {
    if (static_cast<std::int64_t>(mask.size()) != img.plane())
        throw std::invalid_argument("apply_snow: mask size mismatch");
    ImageF out = img;
    const std::int64_t hw = img.plane();
    for (int c = 0; c < 3; ++c)
        for (std::int64_t i = 0; i < hw; ++i) {
            const double m = static_cast<double>(mask[static_cast<std::size_t>(i)]);
            const double v = static_cast<double>(img.data[static_cast<std::size_t>(c * hw + i)]);
            out.data[static_cast<std::size_t>(c * hw + i)] = clip01f(v * (1.0 - m) + intensity * m);
        }
    return out;
}

SceneMaps scene_maps_for(const ImageF& img, const DegradationSpec& spec) {
    spec.validate();
    SceneMaps maps;
    const auto types = category_types(spec.category());
    if (types.count("rain"))
        maps.rain = rain_mask(img.height, img.width, seed_for(spec.seed, "rain"), spec.rain_coverage);
    if (types.count("haze")) {
        const std::uint64_t ds = spec.depth_seed ? spec.depth_seed : seed_for(spec.seed, "depth");
        maps.depth = depth_map(img.height, img.width, ds);
        maps.transmittance.resize(maps.depth.size());
        for (std::size_t i = 0; i < maps.depth.size(); ++i)
            maps.transmittance[i] =
                static_cast<float>(std::exp(-spec.beta_haze * static_cast<double>(maps.depth[i])));
    }
    if (types.count("snow"))
        maps.snow = snow_mask(img.height, img.width, seed_for(spec.seed, "snow"), spec.snow_density);
    return maps;
}

ImageF apply_spec(const ImageF& img, const DegradationSpec& spec) {
    spec.validate();
    const SceneMaps maps = scene_maps_for(img, spec);
    const auto types = category_types(spec.category());
    ImageF cur = img;
    if (types.count("rain")) cur = apply_rain(cur, maps.rain);
    if (types.count("haze")) cur = apply_haze(cur, maps.depth, spec.beta_haze, spec.atmos_a);
    if (types.count("noise")) {
        // illumination follows the image as degraded so far
        cur = apply_noise(cur, illumination_map(cur), spec.alpha_illum, spec.sigma,
                          seed_for(spec.seed, "noise"));
    }
    if (types.count("snow")) cur = apply_snow(cur, maps.snow, spec.snow_intensity);
    return cur;
}

ImageF resize_image(const ImageF& img, std::int64_t h, std::int64_t w) {
    NoGradGuard ng;
    return ImageF::from_tensor(bilinear_resize(img.to_tensor(), h, w));
}

namespace {

bool file_has_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
    std::ifstream f(p, std::ios::binary);
    if (!f) return false;
    std::vector<char> existing((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return existing.size() == bytes.size() &&
           std::equal(existing.begin(), existing.end(), reinterpret_cast<const char*>(bytes.data()));
}

}  // namespace

SynthResult synth_dataset(const std::string& clean_dir, const std::string& out_dir,
                          const SynthConfig& cfg) {
    if (cfg.per_category_train < 1)
        throw std::invalid_argument("synth: need at least one training image per category");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(clean_dir))
        if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::invalid_argument("synth: no .png images in " + clean_dir);

    const std::int64_t needed = cfg.per_category_train + cfg.per_category_test;
    std::vector<ImageF> clean;
    SynthResult res;
    for (const auto& f : files) {
        if (static_cast<std::int64_t>(clean.size()) >= needed) break;
        try {
            clean.push_back(resize_image(load_png(f.string()), cfg.size, cfg.size));
        } catch (const std::exception& ex) {
            std::cerr << "synth: skipping unreadable image " << f << ": " << ex.what() << "\n";
            ++res.skipped_unreadable;
        }
    }
    if (static_cast<std::int64_t>(clean.size()) < needed)
        throw std::invalid_argument("synth: need " + std::to_string(needed) +
                                    " readable clean images, found " + std::to_string(clean.size()));

    auto write_image = [&](const fs::path& p, const ImageF& img) {
        const auto bytes = encode_png(img);
        if (!file_has_bytes(p, bytes)) {
            std::ofstream f(p, std::ios::binary);
            if (!f) throw std::runtime_error("synth: cannot write " + p.string());
            f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
            ++res.files_changed;
        }
        ++res.files_written;
    };

    const fs::path root(out_dir);
    fs::create_directories(root / "clean" / "train");
    fs::create_directories(root / "clean" / "test");

    // shared clean images: identical content across every category
    std::vector<std::string> clean_paths(clean.size());
    for (std::int64_t i = 0; i < needed; ++i) {
        const std::string split = i < cfg.per_category_train ? "train" : "test";
        char name[32];
        std::snprintf(name, sizeof(name), "img%04lld.png", static_cast<long long>(i));
        const fs::path p = root / "clean" / split / name;
        write_image(p, clean[static_cast<std::size_t>(i)]);
        clean_paths[static_cast<std::size_t>(i)] = p.string();
    }

    DatasetManifest manifest;
    for (const auto& cat : all_categories()) {
        fs::create_directories(root / cat / "train");
        fs::create_directories(root / cat / "test");
        const auto type_set = category_types(cat);
        for (std::int64_t i = 0; i < needed; ++i) {
            const std::string split = i < cfg.per_category_train ? "train" : "test";
            const std::string tag = cat + "/" + std::to_string(i);
            Rng prng(seed_for(cfg.seed, "params/" + tag));
            DegradationSpec spec;
            spec.types.assign(type_set.begin(), type_set.end());
            spec.alpha_illum = prng.uniform(2.0, 3.0);
            spec.sigma = prng.uniform(0.03, 0.08);
            spec.beta_haze = prng.uniform(1.0, 2.0);
            spec.atmos_a = prng.uniform(0.6, 0.9);
            spec.rain_coverage = cfg.rain_coverage;
            spec.snow_density = cfg.snow_density;
            spec.seed = seed_for(cfg.seed, tag);
            spec.depth_seed = seed_for(cfg.seed, "depth/" + std::to_string(i));

            const ImageF degraded = apply_spec(clean[static_cast<std::size_t>(i)], spec);
            char name[32];
            std::snprintf(name, sizeof(name), "img%04lld.png", static_cast<long long>(i));
            const fs::path p = root / cat / split / name;
            write_image(p, degraded);

            ManifestEntry e;
            e.clean_path = clean_paths[static_cast<std::size_t>(i)];
            e.degraded_path = p.string();
            e.category = cat;
            e.split = split;
            e.labels = encode_labels(type_set);
            e.alpha_illum = spec.alpha_illum;
            e.sigma = spec.sigma;
            e.beta_haze = spec.beta_haze;
            e.atmos_a = spec.atmos_a;
            e.snow_intensity = spec.snow_intensity;
            e.seed = spec.seed;
            manifest.entries.push_back(std::move(e));
        }
    }
    manifest.save((root / "manifest.jsonl").string());
    res.manifest = std::move(manifest);
    return res;
}

}  // namespace mdir
