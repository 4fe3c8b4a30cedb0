#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mdir/nn.hpp"
#include "mdir/tensor.hpp"

namespace mdir {

struct LdoConfig {
    std::int64_t channels = 32;
    std::int64_t kernel_size = 3;  // one of {3,5,7}
    std::int64_t reduction = 4;

    void validate() const {
        if (kernel_size != 3 && kernel_size != 5 && kernel_size != 7)
            throw std::invalid_argument("ldo: kernel_size must be 3, 5 or 7");
        if (channels % reduction != 0)
            throw std::invalid_argument("ldo: channels must be divisible by reduction");
    }
};

// Captured intermediates of one forward pass, for inspection and tests.
template <class T>
struct LdoIntermediatesT {
    TensorT<T> s;         // [C,1,1] pooled context
    TensorT<T> s_prime;   // [C/r,1,1]
    TensorT<T> w;         // [C*k*k,1,1] raw kernel logits
    TensorT<T> w_dyn;     // [C,k*k] tanh-bounded kernels
    TensorT<T> x_unfold;  // [C,k*k,H*W]
    TensorT<T> o;         // [C,H,W] filtered map
    TensorT<T> alpha;     // [C]
    TensorT<T> beta;      // [C]
    TensorT<T> f_out;     // [C,H,W]
};

using LdoIntermediates = LdoIntermediatesT<float>;

// Local dynamic filtering: a per-image, per-channel k x k kernel set is
// predicted from pooled context, applied depthwise, and the result is gated
// against the input with sigmoid weights.
template <class T>
class Ldo {
public:
    Ldo() = default;
    Ldo(const std::string& name, const LdoConfig& cfg, std::uint64_t base_seed)
        : cfg_(cfg),
          wg_conv1_(name + ".wg_conv1", cfg.channels, cfg.channels / cfg.reduction, 1, 1, 0, base_seed),
          wg_bn_(name + ".wg_bn", cfg.channels / cfg.reduction),
          wg_conv2_(name + ".wg_conv2", cfg.channels / cfg.reduction,
                    cfg.channels * cfg.kernel_size * cfg.kernel_size, 1, 1, 0, base_seed),
          mlp1_(name + ".mlp1", cfg.channels, cfg.channels / cfg.reduction, 1, 1, 0, base_seed),
          mlp2_(name + ".mlp2", cfg.channels / cfg.reduction, 2 * cfg.channels, 1, 1, 0, base_seed) {
        cfg.validate();
    }

    const LdoConfig& config() const { return cfg_; }

    // kernels for one image; normalization uses running statistics
    TensorT<T> generate_kernels(const TensorT<T>& x) const {
        check_input(x);
        TensorT<T> s = global_avg_pool(x);
        TensorT<T> sp = relu(wg_bn_.eval(wg_conv1_.forward(s)));
        return kernels_from_hidden(sp);
    }

    // kernels for a batch; normalization uses batch statistics
    std::vector<TensorT<T>> generate_kernels_batch(const std::vector<TensorT<T>>& xs) {
        std::vector<TensorT<T>> pre;
        pre.reserve(xs.size());
        for (const auto& x : xs) {
            check_input(x);
            pre.push_back(wg_conv1_.forward(global_avg_pool(x)));
        }
        TensorT<T> stacked = relu(wg_bn_.train(concat(pre, 2)));  // [C/r,1,B]
        std::vector<TensorT<T>> out;
        out.reserve(xs.size());
        for (std::size_t i = 0; i < xs.size(); ++i)
            out.push_back(kernels_from_hidden(slice(stacked, 2, static_cast<std::int64_t>(i), 1)));
        return out;
    }

    // O[c,p] = sum_i w_dyn[c,i] * neighborhood_i(x[c], p)
    TensorT<T> dynamic_filter(const TensorT<T>& x, const TensorT<T>& w_dyn) const {
        return depthwise_filter(x, w_dyn, cfg_.kernel_size);
    }

    // F_out = alpha * O + beta * x with [alpha,beta] = sigmoid(MLP(GAP(x)))
    TensorT<T> fuse(const TensorT<T>& x, const TensorT<T>& o) const {
        auto [alpha, beta] = gates(x);
        return add(scale_channels(o, alpha), scale_channels(x, beta));
    }

    std::pair<TensorT<T>, TensorT<T>> gates(const TensorT<T>& x) const {
        TensorT<T> z = sigmoid(mlp2_.forward(relu(mlp1_.forward(global_avg_pool(x)))));
        const std::int64_t C = cfg_.channels;
        return {reshape(slice_channels(z, 0, C), {C}), reshape(slice_channels(z, C, 2 * C), {C})};
    }

    TensorT<T> forward(const TensorT<T>& x) const {
        return fuse(x, dynamic_filter(x, generate_kernels(x)));
    }

    std::vector<TensorT<T>> forward_batch(const std::vector<TensorT<T>>& xs) {
        std::vector<TensorT<T>> kernels = generate_kernels_batch(xs);
        std::vector<TensorT<T>> out;
        out.reserve(xs.size());
        for (std::size_t i = 0; i < xs.size(); ++i)
            out.push_back(fuse(xs[i], dynamic_filter(xs[i], kernels[i])));
        return out;
    }

    LdoIntermediatesT<T> forward_with_intermediates(const TensorT<T>& x) const {
        check_input(x);
        const std::int64_t C = cfg_.channels, k = cfg_.kernel_size;
        LdoIntermediatesT<T> m;
        m.s = global_avg_pool(x);
        m.s_prime = relu(wg_bn_.eval(wg_conv1_.forward(m.s)));
        m.w = wg_conv2_.forward(m.s_prime);
        m.w_dyn = reshape(tanh(m.w), {C, k * k});
        m.x_unfold = unfold(x, k, (k - 1) / 2);
        m.o = dynamic_filter(x, m.w_dyn);
        auto [a, b] = gates(x);
        m.alpha = a;
        m.beta = b;
        m.f_out = add(scale_channels(m.o, m.alpha), scale_channels(x, m.beta));
        return m;
    }

    void collect(ParamRefs<T>& out) {
        wg_conv1_.collect(out);
        wg_bn_.collect(out);
        wg_conv2_.collect(out);
        mlp1_.collect(out);
        mlp2_.collect(out);
    }

private:
    void check_input(const TensorT<T>& x) const {
        if (x.ndim() != 3 || x.dim(0) != cfg_.channels)
            throw std::invalid_argument("ldo: expected [" + std::to_string(cfg_.channels) +
                                        ",H,W] input, got " + shape_str(x.shape()));
    }

    TensorT<T> kernels_from_hidden(const TensorT<T>& s_prime) const {
        const std::int64_t C = cfg_.channels, k = cfg_.kernel_size;
        return reshape(tanh(wg_conv2_.forward(s_prime)), {C, k * k});
    }

    LdoConfig cfg_;
    nn::Conv2d<T> wg_conv1_;
    nn::BatchNorm<T> wg_bn_;
    nn::Conv2d<T> wg_conv2_;
    nn::Conv2d<T> mlp1_, mlp2_;
};

}  // namespace mdir
