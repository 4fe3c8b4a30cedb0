#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "mdir/losses.hpp"
#include "mdir/net.hpp"
#include "mdir/synth.hpp"

namespace mdir {

struct TrainConfig {
    std::int64_t batch_size = 8;
    std::int64_t epochs = 30;
    double lr0 = 3e-4;
    double lr_min = 1e-6;
    std::int64_t crop = 64;
    std::uint64_t seed = 1234;
    std::int64_t classifier_epochs = 5;
    double classifier_lr = 1e-3;
    std::int64_t eval_every = 5;     // epochs between validation passes
    std::int64_t save_every = 0;     // steps between resumable snapshots (0 = epoch end only)
    int threads = 0;                 // 0 = hardware concurrency, 1 = bitwise-reproducible mode

    void validate() const {
        if (!(lr_min < lr0)) throw std::invalid_argument("train: lr_min must be < lr0");
        if (crop % 4 != 0) throw std::invalid_argument("train: crop must be divisible by 4");
        if (batch_size < 1 || epochs < 1) throw std::invalid_argument("train: bad batch/epochs");
    }
};

// Full run configuration; JSON files parse strictly (unknown keys rejected)
// and CLI flags override file values. The resolved form is echoed into every
// output directory.
struct RunConfig {
    NetConfig net;
    TrainConfig train;
    LossWeights loss;
    SynthConfig synth;

    void validate() const {
        net.validate();
        train.validate();
        loss.validate();
    }

    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig from_file(const std::string& path);
    void echo_to(const std::string& out_dir) const;
};

}  // namespace mdir
