#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mdir/rng.hpp"
#include "mdir/tensor.hpp"

namespace mdir {

struct GradCheckResult {
    double max_err = 0.0;       // |analytic - numeric| / max(1, |analytic|, |numeric|)
    std::int64_t checked = 0;
    std::string worst;          // coordinate of the worst error

    bool ok(double tol) const { return checked > 0 && max_err < tol; }
};

// Central finite differences against reverse-mode gradients. `forward`
// rebuilds the graph from the leaf `inputs` on every call; coordinates are
// subsampled deterministically when the total exceeds `max_coords`.
template <class T>
GradCheckResult finite_diff_check(const std::function<TensorT<T>()>& forward,
                                  std::vector<TensorT<T>> inputs, double h = 1e-5,
                                  std::int64_t max_coords = 64, std::uint64_t sample_seed = 7) {
    for (auto& in : inputs) {
        in.set_requires_grad(true);
        in.drop_grad();
    }
    TensorT<T> loss = forward();
    loss.backward();
    std::vector<std::vector<T>> analytic;
    analytic.reserve(inputs.size());
    for (auto& in : inputs) {
        std::vector<T> g = in.grad().empty()
                               ? std::vector<T>(static_cast<std::size_t>(in.numel()), T(0))
                               : in.grad();
        analytic.push_back(std::move(g));
    }

    std::int64_t total = 0;
    for (const auto& in : inputs) total += in.numel();
    std::vector<std::pair<std::size_t, std::int64_t>> coords;
    if (total <= max_coords) {
        for (std::size_t i = 0; i < inputs.size(); ++i)
            for (std::int64_t j = 0; j < inputs[i].numel(); ++j) coords.emplace_back(i, j);
    } else {
        Rng rng(sample_seed);
        for (std::int64_t c = 0; c < max_coords; ++c) {
            std::int64_t flat = rng.uniform_int(0, total - 1);
            for (std::size_t i = 0; i < inputs.size(); ++i) {
                if (flat < inputs[i].numel()) {
                    coords.emplace_back(i, flat);
                    break;
                }
                flat -= inputs[i].numel();
            }
        }
    }

    GradCheckResult res;
    NoGradGuard ng;
    for (const auto& [i, j] : coords) {
        T* slot = inputs[i].data() + j;
        const T saved = *slot;
        *slot = saved + static_cast<T>(h);
        const double fp = static_cast<double>(forward().item());
        *slot = saved - static_cast<T>(h);
        const double fm = static_cast<double>(forward().item());
        *slot = saved;
        const double numeric = (fp - fm) / (2.0 * h);
        const double a = static_cast<double>(analytic[i][static_cast<std::size_t>(j)]);
        const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
        if (err > res.max_err) {
            res.max_err = err;
            res.worst = "input " + std::to_string(i) + " coord " + std::to_string(j);
        }
        ++res.checked;
    }
    return res;
}

}  // namespace mdir
