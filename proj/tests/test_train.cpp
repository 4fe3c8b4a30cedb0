#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mdir/synth.hpp"
#include "mdir/train.hpp"
#include "test_util.hpp"

using namespace mdir;
namespace fs = std::filesystem;

namespace {

// tiny 16x16 dataset, 4 train / 1 test pairs per category
struct TinyData {
    std::string out_dir;
    DatasetManifest manifest;
};

const TinyData& tiny_data() {
    static const TinyData data = [] {
        const std::string clean =
            testutil::make_clean_dir(testutil::fresh_dir("mdir_train_clean"), 5, 16, 7);
        const std::string out = testutil::fresh_dir("mdir_train_data");
        SynthConfig cfg;
        cfg.per_category_train = 4;
        cfg.per_category_test = 1;
        cfg.size = 16;
        cfg.seed = 11;
        return TinyData{out, synth_dataset(clean, out, cfg).manifest};
    }();
    return data;
}

RunConfig tiny_cfg() {
    RunConfig cfg;
    cfg.net.base_channels = 8;
    cfg.net.res_blocks = 1;
    cfg.net.use_cfe = false;
    cfg.train.batch_size = 4;
    cfg.train.epochs = 2;
    cfg.train.crop = 16;
    cfg.train.seed = 99;
    cfg.train.eval_every = 0;
    cfg.train.threads = 1;
    cfg.loss.lambda_freq = 0.0;
    return cfg;
}

std::string file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

double first_logged_loss(const std::string& csv) {
    std::ifstream f(csv);
    std::string line;
    std::getline(f, line);  // header
    std::getline(f, line);
    const auto p1 = line.find(','), p2 = line.rfind(',');
    REQUIRE(p1 != std::string::npos);
    return std::stod(line.substr(p2 + 1));
}

}  // namespace

TEST_CASE("classifier training is deterministic and improves") {
    const auto& data = tiny_data();
    RunConfig cfg = tiny_cfg();
    cfg.train.classifier_epochs = 2;

    const auto r1 = train_classifier(data.manifest, cfg, testutil::fresh_dir("mdir_cls_a"));
    CHECK(r1.last_epoch_loss < r1.first_epoch_loss);

    const auto r2 = train_classifier(data.manifest, cfg, testutil::fresh_dir("mdir_cls_b"));
    CHECK(file_bytes(r1.checkpoint_path) == file_bytes(r2.checkpoint_path));
    CHECK(r1.f1 == r2.f1);
}

TEST_CASE("classifier training rejects an empty split") {
    DatasetManifest empty;
    CHECK_THROWS_AS(train_classifier(empty, tiny_cfg(), testutil::fresh_dir("mdir_cls_c")),
                    std::invalid_argument);
}

TEST_CASE("paired crops align pixel-for-pixel") {
    // degraded == clean, global-residual head starts at zero, spatial-only
    // loss: the very first logged loss is exactly zero iff the crops match
    const std::string dir = testutil::fresh_dir("mdir_pair");
    fs::create_directories(dir + "/imgs");
    DatasetManifest manifest;
    for (int i = 0; i < 4; ++i) {
        const ImageF img = testutil::make_clean_image(40 + static_cast<std::uint64_t>(i), 32);
        const std::string p = dir + "/imgs/p" + std::to_string(i) + ".png";
        save_png(p, img);
        ManifestEntry e;
        e.clean_path = p;
        e.degraded_path = p;
        e.category = "rain";
        e.split = "train";
        e.labels = encode_labels({"rain"});
        manifest.entries.push_back(e);
    }
    RunConfig cfg = tiny_cfg();
    cfg.train.epochs = 1;
    cfg.train.crop = 16;  // forces nontrivial crop offsets inside 32x32 images
    cfg.train.batch_size = 4;
    cfg.loss.scale_weights = {1.0, 0.0, 0.0};
    const auto res = train_restoration(manifest, "", cfg, dir + "/run");
    CHECK(first_logged_loss(dir + "/run/train_log.csv") == 0.0);
    CHECK(res.steps == 1);
}

TEST_CASE("restoration training writes the run directory contract") {
    const auto& data = tiny_data();
    const std::string dir = testutil::fresh_dir("mdir_restore_run");
    const auto res = train_restoration(data.manifest, "", tiny_cfg(), dir);
    CHECK(fs::exists(fs::path(dir) / "config.json"));
    CHECK(fs::exists(fs::path(dir) / "train_log.csv"));
    CHECK(fs::exists(res.best_checkpoint));
    CHECK(fs::exists(res.last_checkpoint));
    CHECK(res.steps == 2 * 7);  // 2 epochs x ceil(28/4)

    SUBCASE("evaluation runs from the stored checkpoint") {
        const MetricReport report = evaluate_checkpoint(data.manifest, res.best_checkpoint, "test");
        CHECK(report.categories.size() == 7);
        for (const auto& cat : {"haze", "h+n", "noise", "rain", "r+h", "r+h+n", "snow"})
            CHECK(report.categories.count(cat) == 1);
    }
    SUBCASE("single-image restoration keeps the input geometry") {
        const Checkpoint ck = Checkpoint::load(res.best_checkpoint);
        const ImageF in = testutil::make_clean_image(90, 32);
        const ImageF out = restore_image(ck, in);
        CHECK(out.height == 32);
        CHECK(out.width == 32);
        for (const float v : out.data) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }
}

TEST_CASE("frozen classifier stays bitwise frozen through restoration training") {
    const auto& data = tiny_data();
    RunConfig cfg = tiny_cfg();
    cfg.net.use_cfe = true;
    cfg.train.classifier_epochs = 1;
    const auto cres = train_classifier(data.manifest, cfg, testutil::fresh_dir("mdir_frozen_cls"));
    const auto tres =
        train_restoration(data.manifest, cres.checkpoint_path, cfg, testutil::fresh_dir("mdir_frozen_run"));

    const Checkpoint before = Checkpoint::load(cres.checkpoint_path);
    const Checkpoint after = Checkpoint::load(tres.last_checkpoint);
    for (const auto& blob : before.blobs) {
        const auto* trained = after.find(blob.name);  // classifier.* names match
        REQUIRE(trained != nullptr);
        CHECK(trained->data == blob.data);
    }
}

TEST_CASE("resuming mid-run reproduces the uninterrupted trajectory bitwise") {
    const auto& data = tiny_data();

    RunConfig cfg = tiny_cfg();
    cfg.train.epochs = 4;
    const std::string full_dir = testutil::fresh_dir("mdir_resume_full");
    train_restoration(data.manifest, "", cfg, full_dir);

    RunConfig half = cfg;
    half.train.epochs = 2;
    const std::string part_dir = testutil::fresh_dir("mdir_resume_part");
    const auto rhalf = train_restoration(data.manifest, "", half, part_dir);
    const std::string cont_dir = testutil::fresh_dir("mdir_resume_cont");
    train_restoration(data.manifest, "", cfg, cont_dir, rhalf.last_checkpoint);

    const Checkpoint a = Checkpoint::load(full_dir + "/last.ckpt");
    const Checkpoint b = Checkpoint::load(cont_dir + "/last.ckpt");
    REQUIRE(a.blobs.size() == b.blobs.size());
    for (std::size_t i = 0; i < a.blobs.size(); ++i) {
        CHECK(a.blobs[i].name == b.blobs[i].name);
        CHECK(a.blobs[i].data == b.blobs[i].data);
    }
}

TEST_CASE("non-finite loss aborts with a diagnostic dump") {
    const auto& data = tiny_data();
    RunConfig cfg = tiny_cfg();
    cfg.train.epochs = 2;
    cfg.train.lr0 = 1e18;  // guaranteed blow-up
    cfg.train.lr_min = 1e17;
    const std::string dir = testutil::fresh_dir("mdir_nan");
    CHECK_THROWS_AS(train_restoration(data.manifest, "", cfg, dir), NumericError);
    CHECK(fs::exists(fs::path(dir) / "nan_dump.json"));
}

TEST_CASE("one-to-one training restricts to a single category") {
    const auto& data = tiny_data();
    RunConfig cfg = tiny_cfg();
    cfg.train.epochs = 1;
    const std::string dir = testutil::fresh_dir("mdir_one");
    const auto res = train_restoration(data.manifest, "", cfg, dir, "", "rain");
    CHECK(res.steps == 1);  // 4 rain images, batch 4
    const MetricReport report = evaluate_checkpoint(data.manifest, res.best_checkpoint, "test", "rain");
    CHECK(report.categories.size() == 1);
    CHECK(report.categories.count("rain") == 1);
}

TEST_CASE("evaluating ground truth as predictions gives the oracle fixture") {
    // identical clean/degraded pairs + an identity restoration: PSNR hits the
    // infinity sentinel and SSIM is exactly one per category
    const std::string dir = testutil::fresh_dir("mdir_gt_eval");
    fs::create_directories(dir + "/imgs");
    DatasetManifest manifest;
    for (const auto& cat : all_categories()) {
        const ImageF img = testutil::make_clean_image(hash_name(cat), 16);
        const std::string p = dir + "/imgs/" + cat + ".png";
        save_png(p, img);
        ManifestEntry e;
        e.clean_path = p;
        e.degraded_path = p;
        e.category = cat;
        e.split = "test";
        const auto t = category_types(cat);
        e.labels = encode_labels(t);
        manifest.entries.push_back(e);
    }
    // zero-parameter network: the global residual makes it the identity map
    RunConfig cfg = tiny_cfg();
    MdirNet<float> net(cfg.net, 1);
    ParamRefs<float> refs = net.params();
    for (auto* p : refs.trainable) std::fill(p->value.data(), p->value.data() + p->value.numel(), 0.0f);
    DegradeClassifier<float> cls(1);
    const MetricReport report = evaluate_model(net, cls, manifest.split("test"));
    REQUIRE(report.categories.size() == 7);
    for (const auto& [cat, m] : report.categories) {
        CHECK(m.psnr_infinite);
        CHECK(m.mean_ssim() == doctest::Approx(1.0).epsilon(1e-9));
    }
    const std::string js = report.to_json();
    CHECK(js.find("\"average_psnr\": null") != std::string::npos);
}

TEST_CASE("report average equals the mean of per-category means") {
    const auto& data = tiny_data();
    RunConfig cfg = tiny_cfg();
    cfg.train.epochs = 1;
    const auto res = train_restoration(data.manifest, "", cfg, testutil::fresh_dir("mdir_avg"));
    const MetricReport report = evaluate_checkpoint(data.manifest, res.best_checkpoint, "test");
    double s = 0.0;
    for (const auto& [cat, m] : report.categories) s += m.mean_psnr();
    CHECK(report.average_psnr() == doctest::Approx(s / 7.0).epsilon(1e-9));
}
