#pragma once

#include <cstdint>
#include <string>

#include "mdir/nn.hpp"
#include "mdir/tensor.hpp"

namespace mdir {

// Conditional feature embedding: projects classifier features to a decoder
// stage's channel width, resizes them to the stage geometry, and adds them to
// the merged stage input. One independent instance per decoder stage.
template <class T>
class CfeStage {
public:
    CfeStage() = default;
    CfeStage(const std::string& name, std::int64_t feat_channels, std::int64_t stage_channels,
             std::uint64_t base_seed)
        : proj_(name + ".proj", feat_channels, stage_channels, 1, 1, 0, base_seed) {}

    // F_embedding = resize(proj(F_c), stage geometry)
    TensorT<T> embed(const TensorT<T>& classifier_feature, std::int64_t h, std::int64_t w) const {
        return bilinear_resize(proj_.forward(classifier_feature), h, w);
    }

    void collect(ParamRefs<T>& out) { proj_.collect(out); }

private:
    nn::Conv2d<T> proj_;
};

// F_d_in = merged + embedding; the merge projection itself lives with the
// decoder stage, this is the additive injection.
template <class T>
TensorT<T> cfe_inject(const TensorT<T>& merged, const TensorT<T>& embedding) {
    if (merged.shape() != embedding.shape())
        throw std::invalid_argument("cfe_inject: embedding shape " + shape_str(embedding.shape()) +
                                    " does not match stage input " + shape_str(merged.shape()));
    return add(merged, embedding);
}

}  // namespace mdir
