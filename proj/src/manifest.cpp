#include "mdir/manifest.hpp"

#include <fstream>
#include <map>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace mdir {

std::string ManifestEntry::to_json_line() const {
    nlohmann::json j;
    j["clean"] = clean_path;
    j["degraded"] = degraded_path;
    j["category"] = category;
    j["split"] = split;
    j["labels"] = labels;
    j["params"] = {{"alpha_illum", alpha_illum},
                   {"sigma", sigma},
                   {"beta_haze", beta_haze},
                   {"atmos_a", atmos_a},
                   {"snow_intensity", snow_intensity}};
    j["seed"] = seed;
    return j.dump();
}

ManifestEntry ManifestEntry::from_json_line(const std::string& line) {
    const nlohmann::json j = nlohmann::json::parse(line);
    ManifestEntry e;
    e.clean_path = j.at("clean").get<std::string>();
    e.degraded_path = j.at("degraded").get<std::string>();
    e.category = j.at("category").get<std::string>();
    e.split = j.at("split").get<std::string>();
    e.labels = j.at("labels").get<std::vector<float>>();
    const auto& p = j.at("params");
    e.alpha_illum = p.at("alpha_illum").get<double>();
    e.sigma = p.at("sigma").get<double>();
    e.beta_haze = p.at("beta_haze").get<double>();
    e.atmos_a = p.at("atmos_a").get<double>();
    e.snow_intensity = p.at("snow_intensity").get<double>();
    e.seed = j.at("seed").get<std::uint64_t>();
    return e;
}

void DatasetManifest::save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::invalid_argument("manifest: cannot write " + path);
    for (const auto& e : entries) f << e.to_json_line() << "\n";
}

DatasetManifest DatasetManifest::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::invalid_argument("manifest: cannot read " + path);
    DatasetManifest m;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        m.entries.push_back(ManifestEntry::from_json_line(line));
    }
    return m;
}

std::vector<const ManifestEntry*> DatasetManifest::split(const std::string& name) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
        if (e.split == name) out.push_back(&e);
    return out;
}

std::vector<const ManifestEntry*> DatasetManifest::split_category(const std::string& name,
                                                                  const std::string& category) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
        if (e.split == name && e.category == category) out.push_back(&e);
    return out;
}

std::set<std::string> DatasetManifest::categories() const {
    std::set<std::string> out;
    for (const auto& e : entries) out.insert(e.category);
    return out;
}

bool DatasetManifest::balanced() const {
    for (const std::string split_name : {"train", "test"}) {
        std::map<std::string, std::int64_t> counts;
        for (const auto& e : entries)
            if (e.split == split_name) counts[e.category]++;
        std::int64_t first = -1;
        for (const auto& [cat, n] : counts) {
            if (first < 0) first = n;
            if (n != first) return false;
        }
    }
    return true;
}

}  // namespace mdir
