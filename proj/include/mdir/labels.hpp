#pragma once

#include <array>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace mdir {

// Base degradation classes in fixed label order.
inline const std::array<std::string, 4>& base_degradations() {
    static const std::array<std::string, 4> names = {"rain", "snow", "haze", "noise"};
    return names;
}

constexpr int kNumLabels = 4;

// Multi-hot encoding; a combined degradation activates each constituent
// class rather than a class of its own.
inline std::vector<float> encode_labels(const std::set<std::string>& types) {
    std::vector<float> v(kNumLabels, 0.0f);
    for (const auto& t : types) {
        bool known = false;
        for (int i = 0; i < kNumLabels; ++i)
            if (t == base_degradations()[static_cast<std::size_t>(i)]) {
                v[static_cast<std::size_t>(i)] = 1.0f;
                known = true;
                break;
            }
        if (!known) throw std::invalid_argument("encode_labels: unknown degradation '" + t + "'");
    }
    return v;
}

inline std::set<std::string> decode_labels(const std::vector<float>& v) {
    std::set<std::string> out;
    for (int i = 0; i < kNumLabels; ++i)
        if (v[static_cast<std::size_t>(i)] > 0.5f) out.insert(base_degradations()[static_cast<std::size_t>(i)]);
    return out;
}

}  // namespace mdir
