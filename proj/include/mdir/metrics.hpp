#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

namespace mdir {

// PSNR in dB over all channels; infinity for identical inputs (serialized as
// null with a flag in reports).
double psnr(const std::vector<float>& pred, const std::vector<float>& gt, double data_range = 1.0);

// Mean SSIM over the luminance plane (channel mean), 11x11 Gaussian window
// sigma=1.5, K1=0.01, K2=0.03, L=1, valid-window coverage only.
double ssim(const std::vector<float>& pred, const std::vector<float>& gt, std::int64_t channels,
            std::int64_t height, std::int64_t width);

struct CategoryMetrics {
    double psnr_sum = 0.0;
    double ssim_sum = 0.0;
    std::int64_t count = 0;
    bool psnr_infinite = false;  // at least one image pair was identical

    double mean_psnr() const { return count ? psnr_sum / static_cast<double>(count) : 0.0; }
    double mean_ssim() const { return count ? ssim_sum / static_cast<double>(count) : 0.0; }
};

// Per-category and averaged PSNR/SSIM. Categories use the report labels
// (haze, h+n, noise, rain, r+h, r+h+n, snow); missing categories stay absent.
struct MetricReport {
    std::map<std::string, CategoryMetrics> categories;

    void add(const std::string& category, double psnr_db, double ssim_val) {
        auto& c = categories[category];
        if (std::isinf(psnr_db))
            c.psnr_infinite = true;
        else
            c.psnr_sum += psnr_db;
        c.ssim_sum += ssim_val;
        c.count += 1;
    }

    bool any_infinite() const {
        for (const auto& [k, c] : categories)
            if (c.psnr_infinite) return true;
        return false;
    }

    // arithmetic mean of per-category means
    double average_psnr() const {
        if (categories.empty()) return 0.0;
        double s = 0.0;
        for (const auto& [k, c] : categories) s += c.mean_psnr();
        return s / static_cast<double>(categories.size());
    }
    double average_ssim() const {
        if (categories.empty()) return 0.0;
        double s = 0.0;
        for (const auto& [k, c] : categories) s += c.mean_ssim();
        return s / static_cast<double>(categories.size());
    }

    std::string to_json() const;
};

}  // namespace mdir
