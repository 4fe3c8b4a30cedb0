#include <doctest.h>

#include <cmath>
#include <vector>

#include "mdir/gradcheck.hpp"
#include "mdir/tensor.hpp"
#include "oracles.hpp"

using namespace mdir;

namespace {

template <class T>
std::vector<double> to_doubles(const TensorT<T>& t) {
    return std::vector<double>(t.data(), t.data() + t.numel());
}

}  // namespace

TEST_CASE("conv2d zero input gives zero output") {
    Rng rng(1);
    TensorD x = TensorD::zeros({1, 3, 3});
    TensorD w = TensorD::rand_normal({2, 1, 3, 3}, rng);
    TensorD y = conv2d(x, w, 1, 1);
    for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == 0.0);
}

TEST_CASE("conv2d 1x1 identity kernel") {
    Rng rng(2);
    TensorD x = TensorD::rand_normal({1, 4, 4}, rng);
    TensorD w = TensorD::full({1, 1, 1, 1}, 1.0);
    TensorD y = conv2d(x, w, 1, 0);
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]));
}

TEST_CASE("conv2d matches the naive six-loop oracle") {
    Rng rng(3);
    TensorD x = TensorD::rand_normal({2, 5, 5}, rng);
    TensorD w = TensorD::rand_normal({3, 2, 3, 3}, rng);
    TensorD b = TensorD::rand_normal({3}, rng);
    TensorD y = conv2d(x, w, b, 1, 1);
    const auto ref = oracle::conv2d_naive(to_doubles(x), 2, 5, 5, to_doubles(w), 3, 3, to_doubles(b), 1, 1);
    REQUIRE(y.numel() == static_cast<std::int64_t>(ref.size()));
    for (std::size_t i = 0; i < ref.size(); ++i)
        CHECK(std::abs(y.data()[i] - ref[i]) < 1e-6);
}

TEST_CASE("conv2d rejects bad shapes") {
    TensorD x = TensorD::zeros({2, 5, 5});
    CHECK_THROWS_AS(conv2d(x, TensorD::zeros({3, 4, 3, 3}), 1, 1), std::invalid_argument);
    CHECK_THROWS_AS(conv2d(x, TensorD::zeros({3, 2, 2, 2}), 1, 0), std::invalid_argument);
}

TEST_CASE("conv shape algebra over kernel/stride/size grid") {
    Rng rng(4);
    for (std::int64_t k : {1, 3, 5, 7})
        for (std::int64_t stride : {1, 2})
            for (std::int64_t h : {1, 4, 9, 16})
                for (std::int64_t w : {1, 5, 16}) {
                    const std::int64_t pad = (k - 1) / 2;
                    if (h + 2 * pad < k || w + 2 * pad < k) continue;
                    TensorD x = TensorD::rand_normal({1, h, w}, rng);
                    TensorD wt = TensorD::rand_normal({2, 1, k, k}, rng);
                    TensorD y = conv2d(x, wt, stride, pad);
                    CHECK(y.dim(1) == (h + 2 * pad - k) / stride + 1);
                    CHECK(y.dim(2) == (w + 2 * pad - k) / stride + 1);
                    if (stride == 1) {  // same-size mode
                        CHECK(y.dim(1) == h);
                        CHECK(y.dim(2) == w);
                    }
                }
}

TEST_CASE("unfold shape and kernel-center identity") {
    Rng rng(5);
    SUBCASE("shape contract") {
        TensorD x = TensorD::rand_normal({2, 4, 4}, rng);
        TensorD u = unfold(x, 3, 1);
        CHECK(u.shape() == Shape{2, 9, 16});
    }
    SUBCASE("constant field fills interior columns") {
        TensorD x = TensorD::full({1, 5, 5}, 0.7);
        TensorD u = unfold(x, 3, 1);
        // interior pixel (2,2) -> column 12
        for (std::int64_t i = 0; i < 9; ++i) CHECK(u.at({0, i, 12}) == doctest::Approx(0.7));
    }
    SUBCASE("center entry of every column equals the source pixel") {
        TensorD x = TensorD::rand_normal({1, 4, 4}, rng);
        TensorD u = unfold(x, 3, 1);
        for (std::int64_t p = 0; p < 16; ++p) CHECK(u.at({0, 4, p}) == doctest::Approx(x.data()[p]));
    }
    SUBCASE("even kernel rejected") {
        TensorD x = TensorD::zeros({1, 4, 4});
        CHECK_THROWS_AS(unfold(x, 2, 0), std::invalid_argument);
    }
}

TEST_CASE("fold(unfold(x)) with overlap-count normalization reproduces x") {
    Rng rng(6);
    for (std::int64_t k : {3, 5}) {
        TensorD x = TensorD::rand_normal({2, 6, 7}, rng);
        const std::int64_t pad = (k - 1) / 2;
        TensorD folded = fold(unfold(x, k, pad), 6, 7, k, pad);
        TensorD counts = fold(unfold(TensorD::full({2, 6, 7}, 1.0), k, pad), 6, 7, k, pad);
        for (std::int64_t i = 0; i < x.numel(); ++i)
            CHECK(std::abs(folded.data()[i] / counts.data()[i] - x.data()[i]) < 1e-6);
    }
}

TEST_CASE("global_avg_pool") {
    SUBCASE("constant field") {
        TensorD y = global_avg_pool(TensorD::full({3, 4, 5}, 0.5));
        CHECK(y.shape() == Shape{3, 1, 1});
        for (int c = 0; c < 3; ++c) CHECK(y.data()[c] == doctest::Approx(0.5));
    }
    SUBCASE("arithmetic mean") {
        TensorD x = TensorD::from_vector({1, 2, 2}, {0, 1, 2, 3});
        CHECK(global_avg_pool(x).item() == doctest::Approx(1.5));
    }
    SUBCASE("summation oracle on 4x7x7") {
        Rng rng(7);
        TensorD x = TensorD::rand_normal({4, 7, 7}, rng);
        TensorD y = global_avg_pool(x);
        for (std::int64_t c = 0; c < 4; ++c) {
            double s = 0.0;
            for (std::int64_t i = 0; i < 49; ++i) s += x.data()[c * 49 + i];
            CHECK(std::abs(y.data()[c] - s / 49.0) < 1e-7);
        }
    }
}

TEST_CASE("activations") {
    TensorD x = TensorD::from_vector({3}, {0.0, 1.0, -2.0});
    CHECK(tanh(x).data()[0] == doctest::Approx(0.0));
    CHECK(tanh(x).data()[1] == doctest::Approx(0.761594).epsilon(1e-6));
    CHECK(sigmoid(x).data()[0] == doctest::Approx(0.5));
    CHECK(relu(x).data()[2] == 0.0);
    CHECK(relu(x).data()[1] == 1.0);
    // range bounds
    Rng rng(8);
    TensorD big = TensorD::rand_normal({100}, rng, 0.0, 20.0);
    TensorD t = tanh(big), s = sigmoid(big), r = relu(big);
    for (std::int64_t i = 0; i < 100; ++i) {
        CHECK(t.data()[i] > -1.0);
        CHECK(t.data()[i] < 1.0);
        CHECK(s.data()[i] > 0.0);
        CHECK(s.data()[i] < 1.0);
        CHECK(r.data()[i] >= 0.0);
    }
}

TEST_CASE("batchnorm") {
    SUBCASE("eval with unit statistics is the identity within eps") {
        TensorD x = TensorD::from_vector({2, 1, 1}, {0.3, -1.2});
        TensorD g = TensorD::full({2}, 1.0), b = TensorD::zeros({2});
        TensorD rm = TensorD::zeros({2}), rv = TensorD::full({2}, 1.0);
        TensorD y = batchnorm_eval(x, g, b, rm, rv);
        for (int i = 0; i < 2; ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-5));
    }
    SUBCASE("eval affine arithmetic: gain 2 bias 1 on input 3 gives 7") {
        TensorD x = TensorD::full({1, 1, 1}, 3.0);
        TensorD g = TensorD::full({1}, 2.0), b = TensorD::full({1}, 1.0);
        TensorD rm = TensorD::zeros({1}), rv = TensorD::full({1}, 1.0);
        CHECK(batchnorm_eval(x, g, b, rm, rv).item() == doctest::Approx(7.0).epsilon(1e-4));
    }
    SUBCASE("train statistics match a two-pass moment oracle") {
        Rng rng(9);
        const std::int64_t C = 3, B = 8;
        TensorD x = TensorD::rand_normal({C, 1, B}, rng, 0.5, 2.0);
        TensorD g = TensorD::full({C}, 1.0), b = TensorD::zeros({C});
        TensorD rm = TensorD::zeros({C}), rv = TensorD::full({C}, 1.0);
        TensorD y = batchnorm_train(x, g, b, rm, rv);
        for (std::int64_t c = 0; c < C; ++c) {
            double mean = 0.0;
            for (std::int64_t i = 0; i < B; ++i) mean += x.data()[c * B + i];
            mean /= B;
            double var = 0.0;
            for (std::int64_t i = 0; i < B; ++i) {
                const double d = x.data()[c * B + i] - mean;
                var += d * d;
            }
            var /= B;
            for (std::int64_t i = 0; i < B; ++i) {
                const double expect = (x.data()[c * B + i] - mean) / std::sqrt(var + 1e-5);
                CHECK(std::abs(y.data()[c * B + i] - expect) < 1e-6);
            }
            // running buffers blend the batch statistics at momentum 0.1
            CHECK(rm.data()[c] == doctest::Approx(0.1 * mean));
            CHECK(rv.data()[c] == doctest::Approx(0.9 + 0.1 * var));
        }
    }
    SUBCASE("zero variance handled by epsilon") {
        TensorD x = TensorD::full({1, 1, 4}, 2.0);
        TensorD g = TensorD::full({1}, 1.0), b = TensorD::zeros({1});
        TensorD rm = TensorD::zeros({1}), rv = TensorD::full({1}, 1.0);
        TensorD y = batchnorm_train(x, g, b, rm, rv);
        for (int i = 0; i < 4; ++i) CHECK(std::isfinite(y.data()[i]));
    }
}

TEST_CASE("bilinear_resize") {
    SUBCASE("constant map stays constant") {
        TensorD y = bilinear_resize(TensorD::full({2, 3, 3}, 0.3), 7, 5);
        for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(0.3));
    }
    SUBCASE("1x1 source broadcasts its value") {
        TensorD y = bilinear_resize(TensorD::full({1, 1, 1}, 0.42), 4, 6);
        for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(0.42));
    }
    SUBCASE("2x2 to 4x4 matches the per-pixel interpolation oracle") {
        TensorD x = TensorD::from_vector({1, 2, 2}, {0, 1, 0, 1});
        TensorD y = bilinear_resize(x, 4, 4);
        const auto xv = to_doubles(x);
        for (std::int64_t oy = 0; oy < 4; ++oy)
            for (std::int64_t ox = 0; ox < 4; ++ox)
                CHECK(std::abs(y.at({0, oy, ox}) - oracle::bilinear_at(xv, 2, 2, 4, 4, oy, ox)) < 1e-6);
    }
    SUBCASE("random resize matches the oracle") {
        Rng rng(10);
        TensorD x = TensorD::rand_normal({2, 5, 7}, rng);
        TensorD y = bilinear_resize(x, 9, 4);
        for (std::int64_t c = 0; c < 2; ++c) {
            std::vector<double> plane(x.data() + c * 35, x.data() + (c + 1) * 35);
            for (std::int64_t oy = 0; oy < 9; ++oy)
                for (std::int64_t ox = 0; ox < 4; ++ox)
                    CHECK(std::abs(y.at({c, oy, ox}) - oracle::bilinear_at(plane, 5, 7, 9, 4, oy, ox)) < 1e-6);
        }
    }
}

TEST_CASE("dft2") {
    SUBCASE("constant image: DC equals the channel sum, all else zero") {
        TensorD f = dft2(TensorD::full({1, 4, 4}, 0.25));
        CHECK(f.at({0, 0, 0, 0}) == doctest::Approx(16 * 0.25));
        for (std::int64_t i = 1; i < 16; ++i) {
            CHECK(std::abs(f.data()[i]) < 1e-9);       // re
            CHECK(std::abs(f.data()[16 + i]) < 1e-9);  // im
        }
    }
    SUBCASE("determinism") {
        Rng rng(11);
        TensorD x = TensorD::rand_normal({1, 8, 8}, rng);
        TensorD f1 = dft2(x), f2 = dft2(x);
        for (std::int64_t i = 0; i < f1.numel(); ++i) CHECK(f1.data()[i] == f2.data()[i]);
    }
    SUBCASE("random 8x8 matches the direct O(N^2) oracle (32-bit)") {
        Rng rng(12);
        Tensor x = Tensor::rand_uniform({1, 8, 8}, rng);
        Tensor f = dft2(x);
        std::vector<double> re, im;
        oracle::dft2_naive(to_doubles(x), 8, 8, re, im);
        for (std::int64_t i = 0; i < 64; ++i) {
            CHECK(std::abs(f.data()[i] - re[static_cast<std::size_t>(i)]) < 1e-4);
            CHECK(std::abs(f.data()[64 + i] - im[static_cast<std::size_t>(i)]) < 1e-4);
        }
    }
    SUBCASE("non-square sizes agree with the oracle") {
        Rng rng(13);
        TensorD x = TensorD::rand_normal({1, 6, 10}, rng);
        TensorD f = dft2(x);
        std::vector<double> re, im;
        oracle::dft2_naive(to_doubles(x), 6, 10, re, im);
        for (std::int64_t i = 0; i < 60; ++i) {
            CHECK(std::abs(f.data()[i] - re[static_cast<std::size_t>(i)]) < 1e-8);
            CHECK(std::abs(f.data()[60 + i] - im[static_cast<std::size_t>(i)]) < 1e-8);
        }
    }
    SUBCASE("magnitude of a constant image") {
        TensorD m = fft2_magnitude(TensorD::full({1, 4, 4}, 0.5));
        CHECK(m.at({0, 0, 0}) == doctest::Approx(8.0));
        CHECK(std::abs(m.at({0, 1, 2})) < 1e-9);
    }
}

TEST_CASE("backward basics") {
    SUBCASE("sum gradient is all ones") {
        TensorD x = TensorD::from_vector({2, 3}, {1, 2, 3, 4, 5, 6});
        x.set_requires_grad(true);
        sum(x).backward();
        for (std::int64_t i = 0; i < 6; ++i) CHECK(x.grad()[static_cast<std::size_t>(i)] == 1.0);
    }
    SUBCASE("sum of squares gradient is 2x") {
        TensorD x = TensorD::from_vector({2}, {1, 2});
        x.set_requires_grad(true);
        sum(mul(x, x)).backward();
        CHECK(x.grad()[0] == doctest::Approx(2.0));
        CHECK(x.grad()[1] == doctest::Approx(4.0));
    }
    SUBCASE("backward rejects non-scalar roots") {
        TensorD x = TensorD::zeros({3});
        x.set_requires_grad(true);
        TensorD y = mul_scalar(x, 2.0);
        CHECK_THROWS_AS(y.backward(), std::invalid_argument);
    }
}

TEST_CASE("finite differences across every registered op") {
    Rng rng(14);
    auto randn = [&](Shape s) { return TensorD::rand_normal(std::move(s), rng, 0.0, 1.0); };
    int cases_run = 0;
    for (std::uint64_t trial = 0; trial < 20; ++trial) {
        const std::uint64_t ss = 100 + trial;
        {
            TensorD x = randn({2, 4, 4}), w = randn({2, 2, 3, 3}), b = randn({2});
            auto r = finite_diff_check<double>(
                [&] { return sum(mul(conv2d(x, w, b, 1, 1), conv2d(x, w, b, 1, 1))); }, {x, w, b}, 1e-5, 24, ss);
            CHECK(r.ok(1e-6));
        }
        {
            TensorD x = randn({2, 3, 3}), w = randn({2, 2, 2, 2}), b = randn({2});
            auto r = finite_diff_check<double>(
                [&] { return sum(mul(conv_transpose2d(x, w, b, 2), conv_transpose2d(x, w, b, 2))); },
                {x, w, b}, 1e-5, 24, ss);
            CHECK(r.ok(1e-6));
        }
        {
            TensorD x = randn({2, 4, 4}), wd = randn({2, 9});
            auto r = finite_diff_check<double>(
                [&] { return sum(mul(depthwise_filter(x, wd, 3), depthwise_filter(x, wd, 3))); }, {x, wd},
                1e-5, 24, ss);
            CHECK(r.ok(1e-6));
        }
        {
            TensorD x = randn({1, 4, 4});
            auto r = finite_diff_check<double>([&] { return sum(mul(unfold(x, 3, 1), unfold(x, 3, 1))); },
                                               {x}, 1e-5, 16, ss);
            CHECK(r.ok(1e-6));
            r = finite_diff_check<double>([&] { return sum(mul(dft2(x), dft2(x))); }, {x}, 1e-5, 16, ss);
            CHECK(r.ok(1e-6));
            r = finite_diff_check<double>(
                [&] { return sum(mul(bilinear_resize(x, 7, 3), bilinear_resize(x, 7, 3))); }, {x}, 1e-5,
                16, ss);
            CHECK(r.ok(1e-6));
            r = finite_diff_check<double>([&] { return mean(mul(tanh(x), sigmoid(x))); }, {x}, 1e-5, 16, ss);
            CHECK(r.ok(1e-6));
            r = finite_diff_check<double>(
                [&] { return sum(mul(global_avg_pool(x), global_avg_pool(x))); }, {x}, 1e-5, 16, ss);
            CHECK(r.ok(1e-6));
        }
        {
            TensorD a = randn({3, 2}), b2 = randn({3, 2});
            auto r = finite_diff_check<double>([&] { return mean_abs_diff(a, b2); }, {a, b2}, 1e-5, 12, ss);
            CHECK(r.ok(1e-6));
            r = finite_diff_check<double>(
                [&] { return sum(mul(add(a, b2), sub(mul_scalar(a, 1.5), b2))); }, {a, b2}, 1e-5, 12, ss);
            CHECK(r.ok(1e-6));
        }
        {
            TensorD x = randn({3, 1, 5}), g = randn({3}), b = randn({3});
            TensorD rm = TensorD::zeros({3}), rv = TensorD::full({3}, 1.0);
            auto r = finite_diff_check<double>(
                [&]() {
                    TensorD rm2 = rm.detached_copy(), rv2 = rv.detached_copy();
                    TensorD y = batchnorm_train(x, g, b, rm2, rv2);
                    return sum(mul(y, y));
                },
                {x, g, b}, 1e-5, 18, ss);
            CHECK(r.ok(1e-6));
            r = finite_diff_check<double>(
                [&] {
                    TensorD y = batchnorm_eval(x, g, b, rm, rv);
                    return sum(mul(y, y));
                },
                {x, g, b}, 1e-5, 18, ss);
            CHECK(r.ok(1e-6));
        }
        {
            TensorD x = randn({4, 3, 3}), s = randn({4});
            auto r = finite_diff_check<double>(
                [&] { return sum(mul(scale_channels(x, s), scale_channels(x, s))); }, {x, s}, 1e-5, 16, ss);
            CHECK(r.ok(1e-6));
        }
        {
            TensorD a = randn({2, 3, 3}), b2 = randn({3, 3, 3});
            auto r = finite_diff_check<double>(
                [&] {
                    TensorD c = concat_channels<double>({a, b2});
                    return sum(mul(slice_channels(c, 1, 4), slice_channels(c, 1, 4)));
                },
                {a, b2}, 1e-5, 16, ss);
            CHECK(r.ok(1e-6));
        }
        {
            TensorD z = randn({4});
            std::vector<double> targets = {1.0, 0.0, 1.0, 0.0};
            auto r = finite_diff_check<double>([&] { return bce_with_logits(z, targets); }, {z}, 1e-5, 4, ss);
            CHECK(r.ok(1e-6));
        }
        ++cases_run;
    }
    CHECK(cases_run == 20);
}

TEST_CASE("purity: forward ops are bitwise deterministic in single-threaded mode") {
    set_num_threads(1);
    Rng rng(15);
    Tensor x = Tensor::rand_normal({3, 8, 8}, rng);
    Tensor w = Tensor::rand_normal({4, 3, 3, 3}, rng);
    Tensor y1 = conv2d(x, w, 1, 1), y2 = conv2d(x, w, 1, 1);
    for (std::int64_t i = 0; i < y1.numel(); ++i) CHECK(y1.data()[i] == y2.data()[i]);
    Tensor f1 = dft2(x), f2 = dft2(x);
    for (std::int64_t i = 0; i < f1.numel(); ++i) CHECK(f1.data()[i] == f2.data()[i]);
    set_num_threads(0);
}

TEST_CASE("thread count does not change results (fixed-block partitioning)") {
    Rng rng(16);
    Tensor x = Tensor::rand_normal({3, 16, 16}, rng);
    Tensor w = Tensor::rand_normal({8, 3, 3, 3}, rng);
    set_num_threads(1);
    Tensor y1 = conv2d(x, w, 1, 1);
    set_num_threads(4);
    Tensor y4 = conv2d(x, w, 1, 1);
    set_num_threads(0);
    for (std::int64_t i = 0; i < y1.numel(); ++i) CHECK(y1.data()[i] == y4.data()[i]);
}

TEST_CASE("finiteness is preserved by forward ops on finite inputs") {
    Rng rng(17);
    TensorD x = TensorD::rand_normal({4, 6, 6}, rng, 0.0, 3.0);
    TensorD w = TensorD::rand_normal({4, 4, 3, 3}, rng);
    CHECK(conv2d(x, w, 1, 1).all_finite());
    CHECK(tanh(x).all_finite());
    CHECK(sigmoid(x).all_finite());
    CHECK(dft2(x).all_finite());
    CHECK(global_avg_pool(x).all_finite());
}
