// Independent reference implementations used as test oracles. Everything here
// is deliberately written as plain nested loops, separate from the library's
// computation paths.
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace oracle {

// cross-correlation, six explicit loops
inline std::vector<double> conv2d_naive(const std::vector<double>& x, std::int64_t ci, std::int64_t h,
                                        std::int64_t w, const std::vector<double>& weight,
                                        std::int64_t co, std::int64_t k,
                                        const std::vector<double>& bias, std::int64_t stride,
                                        std::int64_t pad) {
    const std::int64_t ho = (h + 2 * pad - k) / stride + 1;
    const std::int64_t wo = (w + 2 * pad - k) / stride + 1;
    std::vector<double> out(static_cast<std::size_t>(co * ho * wo), 0.0);
    for (std::int64_t oc = 0; oc < co; ++oc)
        for (std::int64_t oy = 0; oy < ho; ++oy)
            for (std::int64_t ox = 0; ox < wo; ++ox) {
                double acc = bias.empty() ? 0.0 : bias[static_cast<std::size_t>(oc)];
                for (std::int64_t ic = 0; ic < ci; ++ic)
                    for (std::int64_t ky = 0; ky < k; ++ky)
                        for (std::int64_t kx = 0; kx < k; ++kx) {
                            const std::int64_t iy = oy * stride + ky - pad;
                            const std::int64_t ix = ox * stride + kx - pad;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                            acc += x[static_cast<std::size_t>((ic * h + iy) * w + ix)] *
                                   weight[static_cast<std::size_t>(((oc * ci + ic) * k + ky) * k + kx)];
                        }
                out[static_cast<std::size_t>((oc * ho + oy) * wo + ox)] = acc;
            }
    return out;
}

// per-channel sliding-window filtering with one k*k kernel per channel
inline std::vector<double> depthwise_naive(const std::vector<double>& x, std::int64_t c,
                                           std::int64_t h, std::int64_t w,
                                           const std::vector<double>& kernels, std::int64_t k) {
    const std::int64_t pad = (k - 1) / 2;
    std::vector<double> out(static_cast<std::size_t>(c * h * w), 0.0);
    for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t xx = 0; xx < w; ++xx) {
                double acc = 0.0;
                for (std::int64_t ky = 0; ky < k; ++ky)
                    for (std::int64_t kx = 0; kx < k; ++kx) {
                        const std::int64_t iy = y + ky - pad, ix = xx + kx - pad;
                        if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                        acc += kernels[static_cast<std::size_t>(ch * k * k + ky * k + kx)] *
                               x[static_cast<std::size_t>((ch * h + iy) * w + ix)];
                    }
                out[static_cast<std::size_t>((ch * h + y) * w + xx)] = acc;
            }
    return out;
}

// direct O(N^2) 2D DFT, unnormalized
inline void dft2_naive(const std::vector<double>& x, std::int64_t h, std::int64_t w,
                       std::vector<double>& re, std::vector<double>& im) {
    re.assign(static_cast<std::size_t>(h * w), 0.0);
    im.assign(static_cast<std::size_t>(h * w), 0.0);
    const double pi = 3.14159265358979323846;
    for (std::int64_t u = 0; u < h; ++u)
        for (std::int64_t v = 0; v < w; ++v) {
            double sr = 0.0, si = 0.0;
            for (std::int64_t y = 0; y < h; ++y)
                for (std::int64_t xx = 0; xx < w; ++xx) {
                    const double ang = 2.0 * pi * (static_cast<double>(u * y) / static_cast<double>(h) +
                                                   static_cast<double>(v * xx) / static_cast<double>(w));
                    const double val = x[static_cast<std::size_t>(y * w + xx)];
                    sr += val * std::cos(ang);
                    si -= val * std::sin(ang);
                }
            re[static_cast<std::size_t>(u * w + v)] = sr;
            im[static_cast<std::size_t>(u * w + v)] = si;
        }
}

// half-pixel-center bilinear interpolation, one output pixel at a time
inline double bilinear_at(const std::vector<double>& x, std::int64_t h, std::int64_t w,
                          std::int64_t ho, std::int64_t wo, std::int64_t oy, std::int64_t ox) {
    auto sample = [&](double sy, double sx) {
        sy = std::max(0.0, std::min(sy, static_cast<double>(h - 1)));
        sx = std::max(0.0, std::min(sx, static_cast<double>(w - 1)));
        const std::int64_t y0 = static_cast<std::int64_t>(std::floor(sy));
        const std::int64_t x0 = static_cast<std::int64_t>(std::floor(sx));
        const std::int64_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
        const double fy = sy - static_cast<double>(y0), fx = sx - static_cast<double>(x0);
        const double a = x[static_cast<std::size_t>(y0 * w + x0)], b = x[static_cast<std::size_t>(y0 * w + x1)];
        const double c = x[static_cast<std::size_t>(y1 * w + x0)], d = x[static_cast<std::size_t>(y1 * w + x1)];
        return (a * (1 - fx) + b * fx) * (1 - fy) + (c * (1 - fx) + d * fx) * fy;
    };
    const double sy = (static_cast<double>(oy) + 0.5) * static_cast<double>(h) / static_cast<double>(ho) - 0.5;
    const double sx = (static_cast<double>(ox) + 0.5) * static_cast<double>(w) / static_cast<double>(wo) - 0.5;
    return sample(sy, sx);
}

// per-window linear regression guided filter, brute force
inline std::vector<double> guided_filter_naive(const std::vector<double>& g,
                                               const std::vector<double>& p, std::int64_t h,
                                               std::int64_t w, std::int64_t r, double eps) {
    const std::size_t n = g.size();
    std::vector<double> a(n, 0.0), b(n, 0.0), q(n, 0.0);
    auto window = [&](std::int64_t y, std::int64_t x, auto&& fn) {
        for (std::int64_t yy = std::max<std::int64_t>(0, y - r); yy <= std::min(h - 1, y + r); ++yy)
            for (std::int64_t xx = std::max<std::int64_t>(0, x - r); xx <= std::min(w - 1, x + r); ++xx)
                fn(static_cast<std::size_t>(yy * w + xx));
    };
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
            double sg = 0, sp = 0, sgg = 0, sgp = 0;
            std::int64_t cnt = 0;
            window(y, x, [&](std::size_t i) {
                sg += g[i];
                sp += p[i];
                sgg += g[i] * g[i];
                sgp += g[i] * p[i];
                ++cnt;
            });
            const double mg = sg / cnt, mp = sp / cnt;
            const double var = sgg / cnt - mg * mg, cov = sgp / cnt - mg * mp;
            const std::size_t idx = static_cast<std::size_t>(y * w + x);
            a[idx] = cov / (var + eps);
            b[idx] = mp - a[idx] * mg;
        }
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
            double sa = 0, sb = 0;
            std::int64_t cnt = 0;
            window(y, x, [&](std::size_t i) {
                sa += a[i];
                sb += b[i];
                ++cnt;
            });
            const std::size_t idx = static_cast<std::size_t>(y * w + x);
            q[idx] = (sa / cnt) * g[idx] + sb / cnt;
        }
    return q;
}

}  // namespace oracle
