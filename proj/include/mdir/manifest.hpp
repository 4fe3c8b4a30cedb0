#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

namespace mdir {

struct ManifestEntry {
    std::string clean_path;
    std::string degraded_path;
    std::string category;
    std::string split;           // "train" or "test"
    std::vector<float> labels;   // multi-hot over [rain, snow, haze, noise]
    double alpha_illum = 0.0;
    double sigma = 0.0;
    double beta_haze = 0.0;
    double atmos_a = 0.0;
    double snow_intensity = 0.0;
    std::uint64_t seed = 0;

    std::string to_json_line() const;
    static ManifestEntry from_json_line(const std::string& line);
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;

    void save(const std::string& path) const;
    static DatasetManifest load(const std::string& path);

    std::vector<const ManifestEntry*> split(const std::string& name) const;
    std::vector<const ManifestEntry*> split_category(const std::string& name,
                                                     const std::string& category) const;
    std::set<std::string> categories() const;

    // equal entry counts per category within each split
    bool balanced() const;
};

}  // namespace mdir
