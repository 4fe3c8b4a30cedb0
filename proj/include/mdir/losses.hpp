#pragma once

#include <array>
#include <stdexcept>
#include <vector>

#include "mdir/net.hpp"
#include "mdir/tensor.hpp"

namespace mdir {

struct LossWeights {
    double lambda_freq = 0.1;
    std::array<double, 3> scale_weights = {1.0, 1.0, 1.0};

    void validate() const {
        if (lambda_freq < 0) throw std::invalid_argument("loss: lambda_freq must be >= 0");
        for (double w : scale_weights)
            if (w < 0) throw std::invalid_argument("loss: scale weights must be >= 0");
    }
};

// L1 in pixel space plus weighted L1 over the real and imaginary DFT
// components, each mean-normalized over its element count.
template <class T>
TensorT<T> dual_domain_l1(const TensorT<T>& pred, const TensorT<T>& gt, const LossWeights& w) {
    if (pred.shape() != gt.shape())
        throw std::invalid_argument("dual_domain_l1: shape mismatch " + shape_str(pred.shape()) +
                                    " vs " + shape_str(gt.shape()));
    TensorT<T> spatial = mean_abs_diff(pred, gt);
    if (w.lambda_freq == 0.0) return spatial;
    TensorT<T> freq = mean_abs_diff(dft2(pred), dft2(gt));
    return add(spatial, mul_scalar(freq, static_cast<T>(w.lambda_freq)));
}

// Deep-supervision aggregate: per-scale dual-domain loss against the ground
// truth resized to each prediction's geometry.
template <class T>
TensorT<T> total_loss(const SupervisedOutputsT<T>& outs, const TensorT<T>& gt, const LossWeights& w) {
    TensorT<T> acc;
    for (int s = 0; s < 3; ++s) {
        const TensorT<T>& pred = outs.predictions[static_cast<std::size_t>(s)];
        TensorT<T> gts = (s == 0) ? gt : bilinear_resize(gt, pred.dim(1), pred.dim(2));
        TensorT<T> term = mul_scalar(dual_domain_l1(pred, gts, w),
                                     static_cast<T>(w.scale_weights[static_cast<std::size_t>(s)]));
        acc = acc.defined() ? add(acc, term) : term;
    }
    return acc;
}

}  // namespace mdir
