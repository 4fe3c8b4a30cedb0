#include <doctest.h>

#include <cmath>

#include "mdir/losses.hpp"
#include "mdir/metrics.hpp"
#include "oracles.hpp"

using namespace mdir;

namespace {

double freq_l1_naive(const TensorD& a, const TensorD& b) {
    const std::int64_t C = a.dim(0), H = a.dim(1), W = a.dim(2);
    double acc = 0.0;
    for (std::int64_t c = 0; c < C; ++c) {
        std::vector<double> xa(a.data() + c * H * W, a.data() + (c + 1) * H * W);
        std::vector<double> xb(b.data() + c * H * W, b.data() + (c + 1) * H * W);
        std::vector<double> ra, ia, rb, ib;
        oracle::dft2_naive(xa, H, W, ra, ia);
        oracle::dft2_naive(xb, H, W, rb, ib);
        for (std::size_t i = 0; i < ra.size(); ++i) acc += std::abs(ra[i] - rb[i]) + std::abs(ia[i] - ib[i]);
    }
    return acc / static_cast<double>(2 * C * H * W);
}

}  // namespace

TEST_CASE("dual_domain_l1") {
    Rng rng(1);
    LossWeights w;

    SUBCASE("identical inputs give zero") {
        TensorD x = TensorD::rand_uniform({3, 8, 8}, rng);
        CHECK(dual_domain_l1(x, x.detached_copy(), w).item() == 0.0);
    }
    SUBCASE("constant offset with no frequency term is the offset") {
        LossWeights w0;
        w0.lambda_freq = 0.0;
        TensorD gt = TensorD::rand_uniform({3, 8, 8}, rng);
        TensorD pred = add_scalar(gt, 0.1);
        CHECK(dual_domain_l1(pred, gt, w0).item() == doctest::Approx(0.1).epsilon(1e-9));
    }
    SUBCASE("frequency term matches the naive DFT oracle") {
        TensorD pred = TensorD::rand_uniform({2, 6, 6}, rng);
        TensorD gt = TensorD::rand_uniform({2, 6, 6}, rng);
        const double spatial = mean_abs_diff(pred, gt).item();
        const double total = dual_domain_l1(pred, gt, w).item();
        const double freq = (total - spatial) / w.lambda_freq;
        CHECK(std::abs(freq - freq_l1_naive(pred, gt)) < 1e-4);
    }
    SUBCASE("shape mismatch rejected") {
        CHECK_THROWS_AS(dual_domain_l1(TensorD::zeros({3, 4, 4}), TensorD::zeros({3, 8, 8}), w),
                        std::invalid_argument);
    }
}

TEST_CASE("total_loss") {
    Rng rng(2);
    LossWeights w;
    SupervisedOutputsT<double> outs;
    TensorD gt = TensorD::rand_uniform({3, 16, 16}, rng);

    SUBCASE("perfect multi-scale predictions give zero") {
        outs.predictions[0] = gt.detached_copy();
        outs.predictions[1] = bilinear_resize(gt, 8, 8);
        outs.predictions[2] = bilinear_resize(gt, 4, 4);
        CHECK(total_loss(outs, gt, w).item() == 0.0);
    }
    SUBCASE("decomposes into the three per-stage losses") {
        outs.predictions[0] = TensorD::rand_uniform({3, 16, 16}, rng);
        outs.predictions[1] = TensorD::rand_uniform({3, 8, 8}, rng);
        outs.predictions[2] = TensorD::rand_uniform({3, 4, 4}, rng);
        double expect = dual_domain_l1(outs.predictions[0], gt, w).item();
        expect += dual_domain_l1(outs.predictions[1], bilinear_resize(gt, 8, 8), w).item();
        expect += dual_domain_l1(outs.predictions[2], bilinear_resize(gt, 4, 4), w).item();
        CHECK(std::abs(total_loss(outs, gt, w).item() - expect) < 1e-7);
    }
    SUBCASE("doubling the per-scale weights doubles the loss") {
        outs.predictions[0] = TensorD::rand_uniform({3, 16, 16}, rng);
        outs.predictions[1] = TensorD::rand_uniform({3, 8, 8}, rng);
        outs.predictions[2] = TensorD::rand_uniform({3, 4, 4}, rng);
        LossWeights w2 = w;
        w2.scale_weights = {2, 2, 2};
        CHECK(total_loss(outs, gt, w2).item() ==
              doctest::Approx(2.0 * total_loss(outs, gt, w).item()).epsilon(1e-9));
    }
    SUBCASE("nonnegative and zero only at equality") {
        outs.predictions[0] = add_scalar(gt.detached_copy(), 1e-3);
        outs.predictions[1] = bilinear_resize(gt, 8, 8);
        outs.predictions[2] = bilinear_resize(gt, 4, 4);
        CHECK(total_loss(outs, gt, w).item() > 0.0);
    }
}

TEST_CASE("psnr") {
    SUBCASE("constant offset 0.1 gives exactly 20 dB") {
        std::vector<float> gt(300, 0.4f), pred(300, 0.5f);
        CHECK(psnr(pred, gt) == doctest::Approx(20.0).epsilon(1e-9));
    }
    SUBCASE("identical images give the infinity sentinel") {
        std::vector<float> x(100, 0.3f);
        CHECK(std::isinf(psnr(x, x)));
    }
    SUBCASE("matches a two-pass MSE recompute") {
        Rng rng(3);
        std::vector<float> a(256), b(256);
        for (auto& v : a) v = static_cast<float>(rng.uniform());
        for (auto& v : b) v = static_cast<float>(rng.uniform());
        double mse = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
            mse += d * d;
        }
        mse /= static_cast<double>(a.size());
        CHECK(std::abs(psnr(a, b) - 10.0 * std::log10(1.0 / mse)) < 1e-6);
    }
    SUBCASE("strictly decreasing in the offset amplitude") {
        std::vector<float> gt(512, 0.25f);
        double prev = 1e18;
        for (float off : {0.01f, 0.02f, 0.05f, 0.1f, 0.2f}) {
            std::vector<float> pred(512, 0.25f + off);
            const double p = psnr(pred, gt);
            CHECK(p < prev);
            prev = p;
        }
    }
}

TEST_CASE("ssim") {
    const std::int64_t H = 16, W = 16;
    SUBCASE("self-similarity is one") {
        Rng rng(4);
        std::vector<float> x(static_cast<std::size_t>(3 * H * W));
        for (auto& v : x) v = static_cast<float>(rng.uniform());
        CHECK(ssim(x, x, 3, H, W) == doctest::Approx(1.0).epsilon(1e-9));
    }
    SUBCASE("constant 0 vs constant 1 hits the zero-variance closed form") {
        std::vector<float> a(static_cast<std::size_t>(3 * H * W), 0.0f);
        std::vector<float> b(static_cast<std::size_t>(3 * H * W), 1.0f);
        // (2*0*1 + 1e-4) / (0 + 1 + 1e-4), contrast term collapses to 1
        CHECK(ssim(a, b, 3, H, W) == doctest::Approx(1e-4 / 1.0001).epsilon(1e-6));
    }
    SUBCASE("symmetry") {
        Rng rng(5);
        std::vector<float> a(static_cast<std::size_t>(3 * H * W)), b(a.size());
        for (auto& v : a) v = static_cast<float>(rng.uniform());
        for (auto& v : b) v = static_cast<float>(rng.uniform());
        CHECK(std::abs(ssim(a, b, 3, H, W) - ssim(b, a, 3, H, W)) < 1e-9);
    }
    SUBCASE("images smaller than the window are rejected") {
        std::vector<float> tiny(3 * 8 * 8, 0.5f);
        CHECK_THROWS_AS(ssim(tiny, tiny, 3, 8, 8), std::invalid_argument);
    }
    SUBCASE("shared translation shifts only the luminance term") {
        // against the direct closed form on constants: both planes constant,
        // so ssim = (2ab+C1)/(a^2+b^2+C1)
        for (double base : {0.2, 0.5}) {
            std::vector<float> a(static_cast<std::size_t>(3 * H * W), static_cast<float>(base));
            std::vector<float> b(static_cast<std::size_t>(3 * H * W), static_cast<float>(base + 0.1));
            const double expect = (2 * base * (base + 0.1) + 1e-4) /
                                  (base * base + (base + 0.1) * (base + 0.1) + 1e-4);
            CHECK(ssim(a, b, 3, H, W) == doctest::Approx(expect).epsilon(1e-9));
        }
    }
}

TEST_CASE("metric report aggregation") {
    MetricReport r;
    r.add("rain", 20.0, 0.8);
    r.add("rain", 30.0, 0.9);
    r.add("haze", 10.0, 0.5);
    CHECK(r.categories.at("rain").mean_psnr() == doctest::Approx(25.0));
    // the average is the mean of per-category means
    CHECK(r.average_psnr() == doctest::Approx((25.0 + 10.0) / 2.0).epsilon(1e-12));
    CHECK(r.average_ssim() == doctest::Approx((0.85 + 0.5) / 2.0).epsilon(1e-12));

    SUBCASE("infinite PSNR serializes as null with a flag") {
        r.add("snow", std::numeric_limits<double>::infinity(), 1.0);
        const std::string js = r.to_json();
        CHECK(js.find("\"psnr_infinite\": true") != std::string::npos);
        CHECK(js.find("\"psnr\": null") != std::string::npos);
    }
}
