// Command-line front end: dataset synthesis, two-stage training, evaluation,
// single-image restoration, gradient verification, and ablations.
//
// Exit codes: 0 success, 2 bad input, 3 numeric failure.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mdir/checkpoint.hpp"
#include "mdir/classifier.hpp"
#include "mdir/config.hpp"
#include "mdir/gradcheck.hpp"
#include "mdir/image.hpp"
#include "mdir/ldo.hpp"
#include "mdir/losses.hpp"
#include "mdir/synth.hpp"
#include "mdir/train.hpp"

namespace fs = std::filesystem;
using namespace mdir;

namespace {

constexpr int kExitBadInput = 2;
constexpr int kExitNumeric = 3;

struct ConfigCli {
    std::string config_path;
    // flag overrides; negative/zero sentinels mean "not set"
    std::int64_t batch_size = -1, epochs = -1, crop = -1, base_channels = -1, res_blocks = -1,
                 kernel_size = -1, eval_every = -1, save_every = -1;
    std::int64_t seed = -1;
    int threads = -1;
    double lr0 = -1, lambda_freq = -1;
    bool no_ldo = false, no_cfe = false;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON config file (strict keys)");
        cmd->add_option("--seed", seed, "training seed");
        cmd->add_option("--batch-size", batch_size);
        cmd->add_option("--epochs", epochs);
        cmd->add_option("--crop", crop);
        cmd->add_option("--base-channels", base_channels);
        cmd->add_option("--res-blocks", res_blocks);
        cmd->add_option("--kernel-size", kernel_size, "dynamic filter kernel size (3/5/7)");
        cmd->add_option("--eval-every", eval_every, "epochs between validation passes");
        cmd->add_option("--save-every", save_every, "steps between resumable snapshots");
        cmd->add_option("--threads", threads, "worker threads (1 = bitwise-reproducible mode)");
        cmd->add_option("--lr0", lr0, "initial learning rate");
        cmd->add_option("--lambda-freq", lambda_freq, "frequency-domain loss weight");
        cmd->add_flag("--no-ldo", no_ldo, "disable the dynamic filter units");
        cmd->add_flag("--no-cfe", no_cfe, "disable classifier conditioning");
    }

    RunConfig resolve() const {
        RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::from_file(config_path);
        if (seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(seed);
        if (batch_size > 0) cfg.train.batch_size = batch_size;
        if (epochs > 0) cfg.train.epochs = epochs;
        if (crop > 0) cfg.train.crop = crop;
        if (base_channels > 0) cfg.net.base_channels = base_channels;
        if (res_blocks > 0) cfg.net.res_blocks = res_blocks;
        if (kernel_size > 0) cfg.net.ldo_kernel_size = kernel_size;
        if (eval_every >= 0) cfg.train.eval_every = eval_every;
        if (save_every >= 0) cfg.train.save_every = save_every;
        if (threads >= 0) cfg.train.threads = threads;
        if (lr0 > 0) cfg.train.lr0 = lr0;
        if (lambda_freq >= 0) cfg.loss.lambda_freq = lambda_freq;
        if (no_ldo) cfg.net.use_ldo = false;
        if (no_cfe) cfg.net.use_cfe = false;
        cfg.validate();
        return cfg;
    }
};

int run_gradcheck(std::uint64_t seed) {
    // double-precision finite-difference sweep over every differentiable op
    // and the composed modules; nonzero exit on any failure
    struct Case {
        std::string name;
        double tol;
        GradCheckResult result;
    };
    std::vector<Case> cases;
    Rng rng(seed);
    auto randn = [&](Shape s) { return TensorD::rand_normal(std::move(s), rng, 0.0, 1.0); };

    auto check = [&](const std::string& name, double tol, std::vector<TensorD> inputs,
                     std::function<TensorD()> fwd) {
        cases.push_back({name, tol, finite_diff_check<double>(fwd, inputs, 1e-5, 48, seed + cases.size())});
    };

    {
        TensorD x = randn({2, 5, 5}), w = randn({3, 2, 3, 3}), b = randn({3});
        check("conv2d", 1e-6, {x, w, b}, [=] { return sum(mul(conv2d(x, w, b, 1, 1), conv2d(x, w, b, 1, 1))); });
    }
    {
        TensorD x = randn({2, 4, 4}), w = randn({2, 3, 2, 2}), b = randn({3});
        check("conv_transpose2d", 1e-6, {x, w, b},
              [=] { return sum(mul(conv_transpose2d(x, w, b, 2), conv_transpose2d(x, w, b, 2))); });
    }
    {
        TensorD x = randn({2, 4, 4});
        check("unfold", 1e-6, {x}, [=] { return sum(mul(unfold(x, 3, 1), unfold(x, 3, 1))); });
        check("global_avg_pool", 1e-6, {x}, [=] { return sum(mul(global_avg_pool(x), global_avg_pool(x))); });
        check("tanh", 1e-6, {x}, [=] { return sum(mul(tanh(x), tanh(x))); });
        check("sigmoid", 1e-6, {x}, [=] { return sum(mul(sigmoid(x), sigmoid(x))); });
        check("bilinear_resize", 1e-6, {x}, [=] {
            return sum(mul(bilinear_resize(x, 7, 6), bilinear_resize(x, 7, 6)));
        });
        check("dft2", 1e-6, {x}, [=] { return sum(mul(dft2(x), dft2(x))); });
    }
    {
        TensorD x = randn({3, 4, 4}), wd = randn({3, 9});
        check("depthwise_filter", 1e-6, {x, wd},
              [=] { return sum(mul(depthwise_filter(x, wd, 3), depthwise_filter(x, wd, 3))); });
    }
    {
        TensorD x = randn({4, 1, 6}), g = randn({4}), b = randn({4});
        TensorD rm = TensorD::zeros({4}), rv = TensorD::full({4}, 1.0);
        check("batchnorm_train", 1e-6, {x, g, b}, [=]() mutable {
            return sum(mul(batchnorm_train(x, g, b, rm, rv), batchnorm_train(x, g, b, rm, rv)));
        });
        check("batchnorm_eval", 1e-6, {x, g, b},
              [=] { return sum(mul(batchnorm_eval(x, g, b, rm, rv), batchnorm_eval(x, g, b, rm, rv))); });
    }
    {
        LdoConfig lcfg{8, 3, 4};
        Ldo<double> ldo("gc.ldo", lcfg, seed);
        ParamRefs<double> refs;
        ldo.collect(refs);
        TensorD x = randn({8, 5, 5});
        std::vector<TensorD> inputs = {x};
        for (auto* p : refs.trainable) inputs.push_back(p->value);
        check("ldo_forward", 1e-5, inputs, [=] { return mean(mul(ldo.forward(x), ldo.forward(x))); });
    }
    {
        NetConfig ncfg;
        ncfg.base_channels = 4;
        ncfg.res_blocks = 1;
        MdirNet<double> net(ncfg, seed);
        DegradeClassifier<double> cls(seed);
        TensorD img = TensorD::rand_uniform({3, 8, 8}, rng, 0.0, 1.0);
        check("net_forward", 1e-5, {img}, [=] {
            auto outs = net.forward(img, cls);
            TensorD acc = mean(mul(outs.predictions[0], outs.predictions[0]));
            acc = add(acc, mean(mul(outs.predictions[1], outs.predictions[1])));
            return add(acc, mean(mul(outs.predictions[2], outs.predictions[2])));
        });
    }

    bool ok = true;
    for (const auto& c : cases) {
        const bool pass = c.result.ok(c.tol);
        ok = ok && pass;
        std::printf("%-22s %-4s max_err=%.3e (%lld coords)\n", c.name.c_str(), pass ? "PASS" : "FAIL",
                    c.result.max_err, static_cast<long long>(c.result.checked));
    }
    return ok ? 0 : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mdir: mixed-degradation image restoration"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate the balanced degradation dataset");
    std::string clean_dir, out_dir;
    SynthConfig scfg;
    std::int64_t per_category = -1, test_per_category = -1;
    synth->add_option("--clean-dir", clean_dir, "directory of clean .png images")->required();
    synth->add_option("--out-dir", out_dir)->required();
    synth->add_option("--per-category", per_category, "pairs per category (train+test)");
    synth->add_option("--test-per-category", test_per_category, "test pairs per category");
    synth->add_option("--size", scfg.size, "output image size");
    synth->add_option("--seed", scfg.seed);
    synth->add_option("--rain-coverage", scfg.rain_coverage);
    synth->add_option("--snow-density", scfg.snow_density);

    // train-classifier
    auto* trainc = app.add_subcommand("train-classifier", "fit the multi-label degradation classifier");
    std::string manifest_path, run_dir;
    ConfigCli trainc_cfg;
    trainc->add_option("--manifest", manifest_path, "dataset manifest (JSON lines)")->required();
    trainc->add_option("--out-dir", run_dir)->required();
    trainc_cfg.attach(trainc);

    // train
    auto* train = app.add_subcommand("train", "train the restoration network");
    std::string train_manifest, train_out, classifier_ckpt, resume_from, category;
    ConfigCli train_cfg;
    train->add_option("--manifest", train_manifest)->required();
    train->add_option("--out-dir", train_out)->required();
    train->add_option("--classifier", classifier_ckpt, "classifier checkpoint (required unless --no-cfe)");
    train->add_option("--resume", resume_from, "resume from a restoration checkpoint");
    train->add_option("--category", category, "restrict to one category (one-to-one training)");
    train_cfg.attach(train);

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint over a manifest split");
    std::string eval_manifest, eval_ckpt, eval_out, eval_split = "test", eval_category;
    eval->add_option("--manifest", eval_manifest)->required();
    eval->add_option("--checkpoint", eval_ckpt)->required();
    eval->add_option("--out-dir", eval_out)->required();
    eval->add_option("--split", eval_split);
    eval->add_option("--category", eval_category);

    // infer
    auto* infer = app.add_subcommand("infer", "restore one image");
    std::string infer_ckpt, infer_in, infer_out;
    infer->add_option("--checkpoint", infer_ckpt)->required();
    infer->add_option("--input", infer_in)->required();
    infer->add_option("--output", infer_out)->required();

    // gradcheck
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    std::int64_t gc_seed = 20240901;
    gradcheck->add_option("--seed", gc_seed);

    // ablate
    auto* ablate = app.add_subcommand("ablate", "module and kernel-size ablations");
    std::string abl_manifest, abl_out;
    std::int64_t abl_seeds = 3;
    bool abl_kernel_sweep = false;
    ConfigCli abl_cfg;
    ablate->add_option("--manifest", abl_manifest)->required();
    ablate->add_option("--out-dir", abl_out)->required();
    ablate->add_option("--num-seeds", abl_seeds, "number of seeds (median reported)");
    ablate->add_flag("--kernel-sweep", abl_kernel_sweep, "include the 3/5/7 kernel rows");
    abl_cfg.attach(ablate);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) {
            if (per_category > 0) {
                scfg.per_category_test =
                    test_per_category >= 0 ? test_per_category : std::max<std::int64_t>(1, per_category / 6);
                scfg.per_category_train = per_category - scfg.per_category_test;
            } else if (test_per_category >= 0) {
                scfg.per_category_test = test_per_category;
            }
            const SynthResult res = synth_dataset(clean_dir, out_dir, scfg);
            std::printf("categories: %zu\n", all_categories().size());
            for (const auto& cat : all_categories())
                std::printf("  %-16s train=%lld test=%lld\n", cat.c_str(),
                            static_cast<long long>(res.manifest.split_category("train", cat).size()),
                            static_cast<long long>(res.manifest.split_category("test", cat).size()));
            std::printf("%lld files written, %lld files changed\n",
                        static_cast<long long>(res.files_written),
                        static_cast<long long>(res.files_changed));
        } else if (*trainc) {
            const auto manifest = DatasetManifest::load(manifest_path);
            const auto res = train_classifier(manifest, trainc_cfg.resolve(), run_dir);
            std::printf("classifier checkpoint: %s\n", res.checkpoint_path.c_str());
            for (const auto& [label, f1] : res.f1) std::printf("  f1[%s] = %.4f\n", label.c_str(), f1);
        } else if (*train) {
            const auto manifest = DatasetManifest::load(train_manifest);
            const auto res = train_restoration(manifest, classifier_ckpt, train_cfg.resolve(), train_out,
                                               resume_from, category);
            std::printf("steps: %lld  best avg PSNR: %.3f dB\n", static_cast<long long>(res.steps),
                        res.best_psnr);
            std::printf("best checkpoint: %s\n", res.best_checkpoint.c_str());
        } else if (*eval) {
            const auto manifest = DatasetManifest::load(eval_manifest);
            const MetricReport report = evaluate_checkpoint(manifest, eval_ckpt, eval_split, eval_category);
            fs::create_directories(eval_out);
            std::ofstream(fs::path(eval_out) / "eval.json") << report.to_json() << "\n";
            for (const auto& [cat, m] : report.categories) {
                if (m.psnr_infinite)
                    std::printf("  %-8s PSNR=inf     SSIM=%.4f\n", cat.c_str(), m.mean_ssim());
                else
                    std::printf("  %-8s PSNR=%7.3f SSIM=%.4f\n", cat.c_str(), m.mean_psnr(), m.mean_ssim());
            }
            std::printf("report: %s\n", (fs::path(eval_out) / "eval.json").string().c_str());
        } else if (*infer) {
            const Checkpoint ck = Checkpoint::load(infer_ckpt);
            const ImageF in = load_png(infer_in);
            if (in.height % 4 != 0 || in.width % 4 != 0)
                throw std::invalid_argument("infer: input dimensions must be divisible by 4");
            save_png(infer_out, restore_image(ck, in));
            std::printf("restored %s -> %s\n", infer_in.c_str(), infer_out.c_str());
        } else if (*gradcheck) {
            return run_gradcheck(static_cast<std::uint64_t>(gc_seed));
        } else if (*ablate) {
            const auto manifest = DatasetManifest::load(abl_manifest);
            const RunConfig cfg = abl_cfg.resolve();
            std::vector<std::uint64_t> seeds;
            for (std::int64_t s = 0; s < abl_seeds; ++s)
                seeds.push_back(cfg.train.seed + static_cast<std::uint64_t>(s));
            const AblationReport report = run_ablation(manifest, cfg, seeds, abl_out, abl_kernel_sweep);
            for (const auto& r : report.rows)
                std::printf("  %-18s median PSNR=%7.3f SSIM=%.4f\n", r.variant.c_str(), r.median_psnr,
                            r.median_ssim);
        }
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBadInput;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBadInput;
    }
    return 0;
}
