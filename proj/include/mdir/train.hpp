#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mdir/checkpoint.hpp"
#include "mdir/classifier.hpp"
#include "mdir/config.hpp"
#include "mdir/image.hpp"
#include "mdir/manifest.hpp"
#include "mdir/metrics.hpp"
#include "mdir/net.hpp"

namespace mdir {

struct ClassifierTrainResult {
    std::string checkpoint_path;
    std::map<std::string, double> f1;  // per label, threshold 0.5
    double first_epoch_loss = 0.0;
    double last_epoch_loss = 0.0;

    double min_f1() const {
        double m = 1.0;
        for (const auto& [k, v] : f1) m = std::min(m, v);
        return f1.empty() ? 0.0 : m;
    }
};

// Stage one: fit the multi-label degradation classifier with sigmoid BCE.
ClassifierTrainResult train_classifier(const DatasetManifest& manifest, const RunConfig& cfg,
                                       const std::string& out_dir);

std::map<std::string, double> classifier_f1(const DegradeClassifier<float>& classifier,
                                            const std::vector<const ManifestEntry*>& entries);

struct RestoreTrainResult {
    std::string best_checkpoint;
    std::string last_checkpoint;
    double best_psnr = 0.0;
    std::int64_t steps = 0;
    double final_train_loss = 0.0;
};

// Stage two: restoration training with the classifier frozen. Data order and
// crops derive statelessly from (seed, epoch, batch), so resuming from a
// snapshot reproduces the uninterrupted run bit for bit in single-threaded
// mode. `classifier_ckpt` may be empty when conditioning is disabled;
// `category_filter` restricts training/eval to one category.
RestoreTrainResult train_restoration(const DatasetManifest& manifest,
                                     const std::string& classifier_ckpt, const RunConfig& cfg,
                                     const std::string& out_dir,
                                     const std::string& resume_from = "",
                                     const std::string& category_filter = "");

// Full-size evaluation over a manifest split; categories are reported with
// their table labels (haze, h+n, noise, rain, r+h, r+h+n, snow).
MetricReport evaluate_model(const MdirNet<float>& net, const DegradeClassifier<float>& classifier,
                            const std::vector<const ManifestEntry*>& entries);

MetricReport evaluate_checkpoint(const DatasetManifest& manifest, const std::string& ckpt_path,
                                 const std::string& split = "test",
                                 const std::string& category_filter = "");

// Rebuilds the model stored in a restoration checkpoint and restores one image.
ImageF restore_image(const Checkpoint& ckpt, const ImageF& degraded);

struct AblationRow {
    std::string variant;
    std::vector<double> psnr;  // one per seed
    std::vector<double> ssim;
    double median_psnr = 0.0;
    double median_ssim = 0.0;
};

struct AblationReport {
    std::vector<AblationRow> rows;
    std::string to_json() const;
};

// Controlled comparison: baseline, baseline+LDO, baseline+LDO+CFE trained
// with identical seeds and data; optionally a kernel-size sweep of the full
// model. Shared submodules start from identical weights across variants.
AblationReport run_ablation(const DatasetManifest& manifest, const RunConfig& base_cfg,
                            const std::vector<std::uint64_t>& seeds, const std::string& out_dir,
                            bool kernel_sweep = false);

}  // namespace mdir
