#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mdir/tensor.hpp"

namespace mdir {

// Named trainable tensor. Names are stable paths ("enc0.res1.conv1.weight")
// and double as per-parameter init seeds, so two models sharing a submodule
// get bitwise-identical initial weights for it.
template <class T>
struct Parameter {
    std::string name;
    TensorT<T> value;
};

template <class T>
struct ParamRefs {
    std::vector<Parameter<T>*> trainable;
    std::vector<Parameter<T>*> buffers;  // running statistics etc.

    Parameter<T>* find(const std::string& name) const {
        for (auto* p : trainable)
            if (p->name == name) return p;
        for (auto* p : buffers)
            if (p->name == name) return p;
        return nullptr;
    }
    std::int64_t trainable_count() const {
        std::int64_t n = 0;
        for (auto* p : trainable) n += p->value.numel();
        return n;
    }
    void set_requires_grad(bool b) {
        for (auto* p : trainable) p->value.set_requires_grad(b);
    }
    void zero_grad() {
        for (auto* p : trainable) p->value.zero_grad();
    }
};

namespace nn {

// Kaiming-uniform, fan-in mode
template <class T>
TensorT<T> kaiming_uniform(Shape shape, std::int64_t fan_in, std::uint64_t seed) {
    Rng rng(seed);
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    return TensorT<T>::rand_uniform(std::move(shape), rng, -bound, bound);
}

template <class T>
Parameter<T> make_param(const std::string& name, TensorT<T> value) {
    value.set_requires_grad(true);
    value.set_name(name);
    return Parameter<T>{name, std::move(value)};
}

template <class T>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(const std::string& name, std::int64_t cin, std::int64_t cout, std::int64_t k,
           std::int64_t stride, std::int64_t padding, std::uint64_t base_seed, bool zero_init = false)
        : stride_(stride), padding_(padding) {
        TensorT<T> w = zero_init ? TensorT<T>::zeros({cout, cin, k, k})
                                 : kaiming_uniform<T>({cout, cin, k, k}, cin * k * k,
                                                      seed_for(base_seed, name + ".weight"));
        weight_ = make_param<T>(name + ".weight", std::move(w));
        bias_ = make_param<T>(name + ".bias", TensorT<T>::zeros({cout}));
    }

    TensorT<T> forward(const TensorT<T>& x) const {
        return conv2d(x, weight_.value, bias_.value, stride_, padding_);
    }

    void collect(ParamRefs<T>& out) {
        out.trainable.push_back(&weight_);
        out.trainable.push_back(&bias_);
    }

    Parameter<T>& weight() { return weight_; }
    Parameter<T>& bias() { return bias_; }

private:
    Parameter<T> weight_, bias_;
    std::int64_t stride_ = 1, padding_ = 0;
};

template <class T>
class ConvTranspose2d {
public:
    ConvTranspose2d() = default;
    ConvTranspose2d(const std::string& name, std::int64_t cin, std::int64_t cout, std::int64_t k,
                    std::int64_t stride, std::uint64_t base_seed)
        : stride_(stride) {
        weight_ = make_param<T>(name + ".weight",
                                kaiming_uniform<T>({cin, cout, k, k}, cin * k * k,
                                                   seed_for(base_seed, name + ".weight")));
        bias_ = make_param<T>(name + ".bias", TensorT<T>::zeros({cout}));
    }

    TensorT<T> forward(const TensorT<T>& x) const {
        return conv_transpose2d(x, weight_.value, bias_.value, stride_);
    }

    void collect(ParamRefs<T>& out) {
        out.trainable.push_back(&weight_);
        out.trainable.push_back(&bias_);
    }

private:
    Parameter<T> weight_, bias_;
    std::int64_t stride_ = 2;
};

// BatchNorm over the non-channel dims; train() computes batch statistics and
// updates running buffers, eval() is a per-channel affine map.
template <class T>
class BatchNorm {
public:
    BatchNorm() = default;
    BatchNorm(const std::string& name, std::int64_t channels) {
        gamma_ = make_param<T>(name + ".gamma", TensorT<T>::full({channels}, T(1)));
        beta_ = make_param<T>(name + ".beta", TensorT<T>::zeros({channels}));
        running_mean_ = Parameter<T>{name + ".running_mean", TensorT<T>::zeros({channels})};
        running_var_ = Parameter<T>{name + ".running_var", TensorT<T>::full({channels}, T(1))};
        running_mean_.value.set_name(running_mean_.name);
        running_var_.value.set_name(running_var_.name);
    }

    TensorT<T> train(const TensorT<T>& x) {
        return batchnorm_train(x, gamma_.value, beta_.value, running_mean_.value, running_var_.value,
                               momentum_, eps_);
    }

    TensorT<T> eval(const TensorT<T>& x) const {
        return batchnorm_eval(x, gamma_.value, beta_.value, running_mean_.value, running_var_.value, eps_);
    }

    TensorT<T> forward(const TensorT<T>& x, bool training) {
        return training ? train(x) : eval(x);
    }

    void collect(ParamRefs<T>& out) {
        out.trainable.push_back(&gamma_);
        out.trainable.push_back(&beta_);
        out.buffers.push_back(&running_mean_);
        out.buffers.push_back(&running_var_);
    }

    Parameter<T>& gamma() { return gamma_; }
    Parameter<T>& beta() { return beta_; }
    Parameter<T>& running_mean() { return running_mean_; }
    Parameter<T>& running_var() { return running_var_; }

private:
    Parameter<T> gamma_, beta_, running_mean_, running_var_;
    T momentum_ = T(0.1);
    T eps_ = T(1e-5);
};

// x + conv2(relu(conv1(x)))
template <class T>
class ResidualBlock {
public:
    ResidualBlock() = default;
    ResidualBlock(const std::string& name, std::int64_t channels, std::uint64_t base_seed)
        : conv1_(name + ".conv1", channels, channels, 3, 1, 1, base_seed),
          conv2_(name + ".conv2", channels, channels, 3, 1, 1, base_seed) {}

    TensorT<T> forward(const TensorT<T>& x) const {
        return add(x, conv2_.forward(relu(conv1_.forward(x))));
    }

    void collect(ParamRefs<T>& out) {
        conv1_.collect(out);
        conv2_.collect(out);
    }

private:
    Conv2d<T> conv1_, conv2_;
};

}  // namespace nn
}  // namespace mdir
