#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mdir/checkpoint.hpp"
#include "mdir/optim.hpp"
#include "test_util.hpp"

using namespace mdir;
namespace fs = std::filesystem;

TEST_CASE("cosine schedule") {
    const std::int64_t total = 1000;
    SUBCASE("endpoints and midpoint") {
        CHECK(cosine_lr(0, total, 3e-4, 1e-6) == 3e-4);
        CHECK(cosine_lr(total, total, 3e-4, 1e-6) == 1e-6);
        CHECK(cosine_lr(total / 2, total, 3e-4, 1e-6) == doctest::Approx(1.505e-4).epsilon(1e-12));
    }
    SUBCASE("monotone non-increasing") {
        double prev = 1e9;
        for (std::int64_t s = 0; s <= total; ++s) {
            const double lr = cosine_lr(s, total, 3e-4, 1e-6);
            CHECK(lr <= prev + 1e-18);
            prev = lr;
        }
    }
    SUBCASE("out-of-range steps clamp") {
        CHECK(cosine_lr(-5, total, 3e-4, 1e-6) == 3e-4);
        CHECK(cosine_lr(total + 5, total, 3e-4, 1e-6) == 1e-6);
    }
}

TEST_CASE("adam matches the closed-form single-parameter recurrence") {
    Parameter<double> p = nn::make_param<double>("w", TensorD::full({1}, 1.0));
    Adam<double> adam({&p});
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, lr = 0.1;
    const double grads[3] = {0.5, -0.3, 0.1};
    double theta = 1.0, m = 0.0, v = 0.0;
    for (int t = 1; t <= 3; ++t) {
        p.value.node()->ensure_grad();
        p.value.node()->grad[0] = grads[t - 1];
        adam.step(lr);
        m = beta1 * m + (1 - beta1) * grads[t - 1];
        v = beta2 * v + (1 - beta2) * grads[t - 1] * grads[t - 1];
        const double mhat = m / (1 - std::pow(beta1, t));
        const double vhat = v / (1 - std::pow(beta2, t));
        theta -= lr * mhat / (std::sqrt(vhat) + eps);
        CHECK(std::abs(p.value.data()[0] - theta) < 1e-10);
        p.value.zero_grad();
    }
}

TEST_CASE("a step with lr=0 leaves parameters bitwise unchanged") {
    Rng rng(1);
    Parameter<float> p = nn::make_param<float>("w", Tensor::rand_normal({17}, rng));
    const std::vector<float> before(p.value.data(), p.value.data() + p.value.numel());
    Adam<float> adam({&p});
    p.value.node()->ensure_grad();
    for (auto& g : p.value.node()->grad) g = 0.37f;
    adam.step(0.0);
    for (std::int64_t i = 0; i < p.value.numel(); ++i)
        CHECK(p.value.data()[i] == before[static_cast<std::size_t>(i)]);
}

TEST_CASE("checkpoint container") {
    const std::string dir = testutil::fresh_dir("mdir_ckpt");
    Checkpoint ck;
    ck.meta["kind"] = "test";
    ck.meta["step"] = 123;
    ck.meta["nested"] = {{"lr", 3e-4}, {"note", "abc"}};
    Rng rng(2);
    Tensor a = Tensor::rand_normal({3, 4}, rng), b = Tensor::rand_normal({7}, rng);
    ck.add_blob("layer.weight", a.shape(), a.data(), a.numel());
    ck.add_blob("layer.bias", b.shape(), b.data(), b.numel());

    const std::string p1 = dir + "/one.ckpt", p2 = dir + "/two.ckpt";
    ck.save(p1);

    SUBCASE("round trip preserves everything") {
        const Checkpoint back = Checkpoint::load(p1);
        CHECK(back.meta == ck.meta);
        REQUIRE(back.blobs.size() == 2);
        const auto* blob = back.find("layer.weight");
        REQUIRE(blob != nullptr);
        CHECK(blob->shape == Shape{3, 4});
        for (std::int64_t i = 0; i < a.numel(); ++i)
            CHECK(blob->data[static_cast<std::size_t>(i)] == a.data()[i]);
    }
    SUBCASE("save -> load -> save is byte-identical") {
        Checkpoint::load(p1).save(p2);
        std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
        const std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
        const std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
        CHECK(s1 == s2);
        CHECK(!s1.empty());
    }
    SUBCASE("missing and malformed files are rejected") {
        CHECK_THROWS_AS(Checkpoint::load(dir + "/nope.ckpt"), std::invalid_argument);
        std::ofstream(dir + "/garbage.ckpt") << "not a checkpoint";
        CHECK_THROWS_AS(Checkpoint::load(dir + "/garbage.ckpt"), std::invalid_argument);
    }
    SUBCASE("parameter snapshot and restore") {
        Parameter<float> w = nn::make_param<float>("m.w", Tensor::rand_normal({5}, rng));
        ParamRefs<float> refs;
        refs.trainable.push_back(&w);
        Checkpoint snap;
        snap.store_params(refs, "net.");
        const std::vector<float> orig(w.value.data(), w.value.data() + 5);
        std::fill(w.value.data(), w.value.data() + 5, 0.0f);
        snap.load_params(refs, "net.");
        for (int i = 0; i < 5; ++i) CHECK(w.value.data()[i] == orig[static_cast<std::size_t>(i)]);
    }
}
