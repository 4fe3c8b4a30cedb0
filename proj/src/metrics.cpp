#include "mdir/metrics.hpp"

#include <algorithm>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace mdir {

double psnr(const std::vector<float>& pred, const std::vector<float>& gt, double data_range) {
    if (pred.size() != gt.size() || pred.empty())
        throw std::invalid_argument("psnr: size mismatch or empty input");
    double mse = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = static_cast<double>(pred[i]) - static_cast<double>(gt[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(pred.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(data_range * data_range / mse);
}

namespace {

std::vector<double> gaussian_window(int radius, double sigma) {
    std::vector<double> w(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-(i * i) / (2.0 * sigma * sigma));
        w[static_cast<std::size_t>(i + radius)] = v;
        sum += v;
    }
    for (auto& v : w) v /= sum;
    return w;
}

// separable valid-mode Gaussian filtering of an H x W plane
std::vector<double> gauss_valid(const std::vector<double>& img, std::int64_t h, std::int64_t w,
                                const std::vector<double>& win) {
    const std::int64_t r = static_cast<std::int64_t>(win.size() / 2);
    const std::int64_t hw = w - 2 * r;
    std::vector<double> tmp(static_cast<std::size_t>(h * hw));
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < hw; ++x) {
            double acc = 0.0;
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(win.size()); ++i)
                acc += win[static_cast<std::size_t>(i)] * img[static_cast<std::size_t>(y * w + x + i)];
            tmp[static_cast<std::size_t>(y * hw + x)] = acc;
        }
    const std::int64_t hh = h - 2 * r;
    std::vector<double> out(static_cast<std::size_t>(hh * hw));
    for (std::int64_t y = 0; y < hh; ++y)
        for (std::int64_t x = 0; x < hw; ++x) {
            double acc = 0.0;
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(win.size()); ++i)
                acc += win[static_cast<std::size_t>(i)] * tmp[static_cast<std::size_t>((y + i) * hw + x)];
            out[static_cast<std::size_t>(y * hw + x)] = acc;
        }
    return out;
}

}  // namespace

double ssim(const std::vector<float>& pred, const std::vector<float>& gt, std::int64_t channels,
            std::int64_t height, std::int64_t width) {
    if (pred.size() != gt.size() ||
        static_cast<std::int64_t>(pred.size()) != channels * height * width)
        throw std::invalid_argument("ssim: size mismatch");
    constexpr int kRadius = 5;  // 11x11 window
    if (height < 2 * kRadius + 1 || width < 2 * kRadius + 1)
        throw std::invalid_argument("ssim: image smaller than the 11x11 window");

    const std::int64_t hw = height * width;
    std::vector<double> x(static_cast<std::size_t>(hw), 0.0), y(static_cast<std::size_t>(hw), 0.0);
    for (std::int64_t c = 0; c < channels; ++c)
        for (std::int64_t i = 0; i < hw; ++i) {
            x[static_cast<std::size_t>(i)] += static_cast<double>(pred[static_cast<std::size_t>(c * hw + i)]);
            y[static_cast<std::size_t>(i)] += static_cast<double>(gt[static_cast<std::size_t>(c * hw + i)]);
        }
    for (std::int64_t i = 0; i < hw; ++i) {
        x[static_cast<std::size_t>(i)] /= static_cast<double>(channels);
        y[static_cast<std::size_t>(i)] /= static_cast<double>(channels);
    }

    const auto win = gaussian_window(kRadius, 1.5);
    std::vector<double> xx(x.size()), yy(y.size()), xy(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    const auto mu_x = gauss_valid(x, height, width, win);
    const auto mu_y = gauss_valid(y, height, width, win);
    const auto m_xx = gauss_valid(xx, height, width, win);
    const auto m_yy = gauss_valid(yy, height, width, win);
    const auto m_xy = gauss_valid(xy, height, width, win);

    constexpr double kC1 = 0.01 * 0.01;  // (K1*L)^2
    constexpr double kC2 = 0.03 * 0.03;  // (K2*L)^2
    double acc = 0.0;
    for (std::size_t i = 0; i < mu_x.size(); ++i) {
        const double vx = m_xx[i] - mu_x[i] * mu_x[i];
        const double vy = m_yy[i] - mu_y[i] * mu_y[i];
        const double cxy = m_xy[i] - mu_x[i] * mu_y[i];
        const double num = (2.0 * mu_x[i] * mu_y[i] + kC1) * (2.0 * cxy + kC2);
        const double den = (mu_x[i] * mu_x[i] + mu_y[i] * mu_y[i] + kC1) * (vx + vy + kC2);
        acc += num / den;
    }
    return acc / static_cast<double>(mu_x.size());
}

std::string MetricReport::to_json() const {
    nlohmann::json j;
    nlohmann::json cats = nlohmann::json::object();
    for (const auto& [name, c] : categories) {
        nlohmann::json row;
        if (c.psnr_infinite) {
            row["psnr"] = nullptr;
            row["psnr_infinite"] = true;
        } else {
            row["psnr"] = c.mean_psnr();
            row["psnr_infinite"] = false;
        }
        row["ssim"] = c.mean_ssim();
        row["count"] = c.count;
        cats[name] = row;
    }
    j["categories"] = cats;
    if (any_infinite()) {
        j["average_psnr"] = nullptr;
        j["average_psnr_infinite"] = true;
    } else {
        j["average_psnr"] = average_psnr();
        j["average_psnr_infinite"] = false;
    }
    j["average_ssim"] = average_ssim();
    return j.dump(2);
}

}  // namespace mdir
