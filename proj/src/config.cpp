#include "mdir/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>

namespace mdir {

namespace {

void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw std::invalid_argument("config: '" + where + "' must be an object");
    for (const auto& [k, v] : j.items())
        if (!allowed.count(k))
            throw std::invalid_argument("config: unknown key '" + k + "' in " + where);
}

template <class T>
void get_if(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

nlohmann::json RunConfig::to_json() const {
    nlohmann::json j;
    j["net"] = {{"base_channels", net.base_channels},
                {"res_blocks", net.res_blocks},
                {"ldo_kernel_size", net.ldo_kernel_size},
                {"ldo_reduction", net.ldo_reduction},
                {"use_ldo", net.use_ldo},
                {"use_cfe", net.use_cfe}};
    j["train"] = {{"batch_size", train.batch_size},
                  {"epochs", train.epochs},
                  {"lr0", train.lr0},
                  {"lr_min", train.lr_min},
                  {"crop", train.crop},
                  {"seed", train.seed},
                  {"classifier_epochs", train.classifier_epochs},
                  {"classifier_lr", train.classifier_lr},
                  {"eval_every", train.eval_every},
                  {"save_every", train.save_every},
                  {"threads", train.threads}};
    j["loss"] = {{"lambda_freq", loss.lambda_freq}, {"scale_weights", loss.scale_weights}};
    j["synth"] = {{"per_category_train", synth.per_category_train},
                  {"per_category_test", synth.per_category_test},
                  {"size", synth.size},
                  {"seed", synth.seed},
                  {"rain_coverage", synth.rain_coverage},
                  {"snow_density", synth.snow_density}};
    return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    RunConfig cfg;
    check_keys(j, {"net", "train", "loss", "synth"}, "config root");
    if (j.contains("net")) {
        const auto& n = j.at("net");
        check_keys(n, {"base_channels", "res_blocks", "ldo_kernel_size", "ldo_reduction", "use_ldo", "use_cfe"},
                   "net");
        get_if(n, "base_channels", cfg.net.base_channels);
        get_if(n, "res_blocks", cfg.net.res_blocks);
        get_if(n, "ldo_kernel_size", cfg.net.ldo_kernel_size);
        get_if(n, "ldo_reduction", cfg.net.ldo_reduction);
        get_if(n, "use_ldo", cfg.net.use_ldo);
        get_if(n, "use_cfe", cfg.net.use_cfe);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        check_keys(t,
                   {"batch_size", "epochs", "lr0", "lr_min", "crop", "seed", "classifier_epochs",
                    "classifier_lr", "eval_every", "save_every", "threads"},
                   "train");
        get_if(t, "batch_size", cfg.train.batch_size);
        get_if(t, "epochs", cfg.train.epochs);
        get_if(t, "lr0", cfg.train.lr0);
        get_if(t, "lr_min", cfg.train.lr_min);
        get_if(t, "crop", cfg.train.crop);
        get_if(t, "seed", cfg.train.seed);
        get_if(t, "classifier_epochs", cfg.train.classifier_epochs);
        get_if(t, "classifier_lr", cfg.train.classifier_lr);
        get_if(t, "eval_every", cfg.train.eval_every);
        get_if(t, "save_every", cfg.train.save_every);
        get_if(t, "threads", cfg.train.threads);
    }
    if (j.contains("loss")) {
        const auto& l = j.at("loss");
        check_keys(l, {"lambda_freq", "scale_weights"}, "loss");
        get_if(l, "lambda_freq", cfg.loss.lambda_freq);
        get_if(l, "scale_weights", cfg.loss.scale_weights);
    }
    if (j.contains("synth")) {
        const auto& s = j.at("synth");
        check_keys(s, {"per_category_train", "per_category_test", "size", "seed", "rain_coverage", "snow_density"},
                   "synth");
        get_if(s, "per_category_train", cfg.synth.per_category_train);
        get_if(s, "per_category_test", cfg.synth.per_category_test);
        get_if(s, "size", cfg.synth.size);
        get_if(s, "seed", cfg.synth.seed);
        get_if(s, "rain_coverage", cfg.synth.rain_coverage);
        get_if(s, "snow_density", cfg.synth.snow_density);
    }
    cfg.validate();
    return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::invalid_argument("config: cannot read " + path);
    nlohmann::json j;
    f >> j;
    return from_json(j);
}

void RunConfig::echo_to(const std::string& out_dir) const {
    std::filesystem::create_directories(out_dir);
    std::ofstream f(std::filesystem::path(out_dir) / "config.json");
    f << to_json().dump(2) << "\n";
}

}  // namespace mdir
