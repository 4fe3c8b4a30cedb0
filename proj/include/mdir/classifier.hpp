#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mdir/labels.hpp"
#include "mdir/nn.hpp"
#include "mdir/tensor.hpp"

namespace mdir {

template <class T>
struct ClassifierOutputT {
    TensorT<T> logits;   // [4], independent sigmoid heads
    TensorT<T> feature;  // [C_f, H/8, W/8], last conv activation before pooling
};

using ClassifierOutput = ClassifierOutputT<float>;

// Lightweight multi-label degradation classifier. Three stride-2 stages plus
// one stride-1 stage (widths 16/32/64/64) keep the tapped feature map at 1/8
// of the input resolution.
template <class T>
class DegradeClassifier {
public:
    static constexpr std::int64_t kFeatureChannels = 64;

    DegradeClassifier() = default;
    explicit DegradeClassifier(std::uint64_t base_seed, const std::string& name = "classifier")
        : conv1_(name + ".conv1", 3, 16, 3, 2, 1, base_seed),
          conv2_(name + ".conv2", 16, 32, 3, 2, 1, base_seed),
          conv3_(name + ".conv3", 32, 64, 3, 2, 1, base_seed),
          conv4_(name + ".conv4", 64, 64, 3, 1, 1, base_seed),
          head_(name + ".head", 64, kNumLabels, 1, 1, 0, base_seed) {}

    ClassifierOutputT<T> classify(const TensorT<T>& image) const {
        if (image.ndim() != 3 || image.dim(0) != 3)
            throw std::invalid_argument("classifier: expected RGB input [3,H,W], got " +
                                        shape_str(image.shape()));
        TensorT<T> h = relu(conv1_.forward(image));
        h = relu(conv2_.forward(h));
        h = relu(conv3_.forward(h));
        TensorT<T> feature = relu(conv4_.forward(h));
        TensorT<T> logits = reshape(head_.forward(global_avg_pool(feature)), {kNumLabels});
        return {logits, feature};
    }

    void collect(ParamRefs<T>& out) {
        conv1_.collect(out);
        conv2_.collect(out);
        conv3_.collect(out);
        conv4_.collect(out);
        head_.collect(out);
    }

    ParamRefs<T> params() {
        ParamRefs<T> refs;
        collect(refs);
        return refs;
    }

    void freeze() { params().set_requires_grad(false); }

private:
    nn::Conv2d<T> conv1_, conv2_, conv3_, conv4_, head_;
};

}  // namespace mdir
