#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "mdir/image.hpp"
#include "mdir/labels.hpp"
#include "mdir/manifest.hpp"

namespace mdir {

// Per-image degradation recipe. `types` is applied in rain -> haze -> noise
// order; snow is never combined with anything else.
struct DegradationSpec {
    std::vector<std::string> types;
    double alpha_illum = 2.5;     // [2,3]
    double sigma = 0.05;          // [0.03,0.08]
    double beta_haze = 1.5;       // [1,2]
    double atmos_a = 0.75;        // [0.6,0.9]
    double snow_intensity = 1.01;
    double rain_coverage = 0.04;  // target streak pixel fraction
    double snow_density = 0.004;  // flakes per pixel
    std::uint64_t seed = 0;       // per-image stream
    std::uint64_t depth_seed = 0; // content-tied, shared across categories

    void validate() const;
    std::string category() const;  // "rain_haze_noise" etc.
};

struct SceneMaps {
    std::vector<float> illumination;  // L in [0.05,1]
    std::vector<float> depth;         // d in [0,1]
    std::vector<float> transmittance; // exp(-beta*d)
    std::vector<float> rain;          // binary
    std::vector<float> snow;          // [0,1]
};

// categories in report order; `category_name` <-> directory, `report_label` <-> tables
const std::vector<std::string>& all_categories();
std::string report_label(const std::string& category);
std::set<std::string> category_types(const std::string& category);

// Edge-preserving smoothing: per-window linear regression of src on guide,
// box radius / regularization eps, window means of the coefficients.
std::vector<float> guided_filter(const std::vector<float>& guide, const std::vector<float>& src,
                                 std::int64_t h, std::int64_t w, std::int64_t radius, double eps);

// guided-filtered max-RGB lit by luminance, clamped to [0.05, 1]
std::vector<float> illumination_map(const ImageF& img);

// vertical gradient blended with smooth seeded noise, min-max normalized
std::vector<float> depth_map(std::int64_t h, std::int64_t w, std::uint64_t seed);

// seeded sparse streak field, drawn until the requested pixel coverage is
// reached, motion-smeared along the streak direction, binarized at 0.5
std::vector<float> rain_mask(std::int64_t h, std::int64_t w, std::uint64_t seed, double coverage);

// seeded anti-aliased disks (radius 1-4 px), placed without overlap
std::vector<float> snow_mask(std::int64_t h, std::int64_t w, std::uint64_t seed, double density);

// I_noise = clip(I/L * L^alpha + N(0,sigma), 0, 1), noise i.i.d. per channel
ImageF apply_noise(const ImageF& img, const std::vector<float>& illumination, double alpha,
                   double sigma, std::uint64_t noise_seed);

// I_haze = I*t + A*(1-t), t = exp(-beta*d)
ImageF apply_haze(const ImageF& img, const std::vector<float>& depth, double beta, double atmos_a);

// clip(I + M, 0, 1)
ImageF apply_rain(const ImageF& img, const std::vector<float>& mask);

// clip(I*(1-M) + C*M, 0, 1); the clip is needed because C > 1
ImageF apply_snow(const ImageF& img, const std::vector<float>& mask, double intensity = 1.01);

// full recipe: sequential composition with per-component seed streams
ImageF apply_spec(const ImageF& img, const DegradationSpec& spec);
SceneMaps scene_maps_for(const ImageF& img, const DegradationSpec& spec);

struct SynthConfig {
    std::int64_t per_category_train = 50;
    std::int64_t per_category_test = 10;
    std::int64_t size = 64;
    std::uint64_t seed = 0;
    double rain_coverage = 0.04;
    double snow_density = 0.004;
};

struct SynthResult {
    DatasetManifest manifest;
    std::int64_t files_written = 0;
    std::int64_t files_changed = 0;  // differs from files already on disk
    std::int64_t skipped_unreadable = 0;
};

// Builds the balanced 7-category dataset: every clean image is reused across
// all categories, files land in out_dir/<category>/{train,test}/, the
// manifest in out_dir/manifest.jsonl. Deterministic per seed.
SynthResult synth_dataset(const std::string& clean_dir, const std::string& out_dir,
                          const SynthConfig& cfg);

ImageF resize_image(const ImageF& img, std::int64_t h, std::int64_t w);

}  // namespace mdir
