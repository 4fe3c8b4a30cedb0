#pragma once

#include <cmath>
#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "mdir/nn.hpp"
#include "mdir/tensor.hpp"

namespace mdir {

// lr(step) = lr_min + 0.5*(lr0 - lr_min)*(1 + cos(pi*step/total)); out-of-range
// steps clamp with a warning.
inline double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr0, double lr_min) {
    if (total_steps < 1) throw std::invalid_argument("cosine_lr: total_steps must be >= 1");
    if (step < 0 || step > total_steps) {
        std::cerr << "cosine_lr: step " << step << " outside [0," << total_steps << "], clamping\n";
        step = step < 0 ? 0 : total_steps;
    }
    if (step == 0) return lr0;
    if (step == total_steps) return lr_min;
    const double t = static_cast<double>(step) / static_cast<double>(total_steps);
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(3.14159265358979323846 * t));
}

template <class T>
class Adam {
public:
    Adam() = default;
    explicit Adam(std::vector<Parameter<T>*> params, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8)
        : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(static_cast<std::size_t>(params_[i]->value.numel()), T(0));
            v_[i].assign(static_cast<std::size_t>(params_[i]->value.numel()), T(0));
        }
    }

    void zero_grad() {
        for (auto* p : params_) p->value.zero_grad();
    }

    void step(double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i]->value;
            const std::vector<T>& g = p.grad();
            T* w = p.data();
            const std::int64_t n = p.numel();
            for (std::int64_t j = 0; j < n; ++j) {
                const double gj = g.empty() ? 0.0 : static_cast<double>(g[static_cast<std::size_t>(j)]);
                double mj = beta1_ * static_cast<double>(m_[i][static_cast<std::size_t>(j)]) + (1.0 - beta1_) * gj;
                double vj = beta2_ * static_cast<double>(v_[i][static_cast<std::size_t>(j)]) + (1.0 - beta2_) * gj * gj;
                m_[i][static_cast<std::size_t>(j)] = static_cast<T>(mj);
                v_[i][static_cast<std::size_t>(j)] = static_cast<T>(vj);
                const double update = (mj / bc1) / (std::sqrt(vj / bc2) + eps_);
                w[j] -= static_cast<T>(lr * update);
            }
        }
    }

    std::int64_t steps_taken() const { return t_; }
    void set_steps_taken(std::int64_t t) { t_ = t; }
    const std::vector<Parameter<T>*>& params() const { return params_; }
    std::vector<T>& moment1(std::size_t i) { return m_[i]; }
    std::vector<T>& moment2(std::size_t i) { return v_[i]; }

private:
    std::vector<Parameter<T>*> params_;
    std::vector<std::vector<T>> m_, v_;
    std::int64_t t_ = 0;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
};

}  // namespace mdir
