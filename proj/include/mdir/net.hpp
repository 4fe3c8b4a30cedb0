#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mdir/cfe.hpp"
#include "mdir/classifier.hpp"
#include "mdir/ldo.hpp"
#include "mdir/nn.hpp"
#include "mdir/tensor.hpp"

namespace mdir {

struct NetConfig {
    std::int64_t base_channels = 16;  // 32 at full scale
    std::int64_t res_blocks = 3;      // 7 at full scale
    std::int64_t ldo_kernel_size = 3;
    std::int64_t ldo_reduction = 4;
    bool use_ldo = true;
    bool use_cfe = true;

    static constexpr int kStages = 3;

    std::int64_t stage_channels(int i) const { return base_channels << i; }

    void validate() const {
        if (base_channels < 4) throw std::invalid_argument("net: base_channels must be >= 4");
        if (res_blocks < 1) throw std::invalid_argument("net: res_blocks must be >= 1");
        LdoConfig{base_channels, ldo_kernel_size, ldo_reduction}.validate();
    }
};

template <class T>
struct EncodedPyramidT {
    TensorT<T> stem;                    // [C,H,W]
    std::array<TensorT<T>, 3> levels;   // [C,H,W], [2C,H/2,W/2], [4C,H/4,W/4]
};

// Per-scale predictions, finest first: H, H/2, H/4.
template <class T>
struct SupervisedOutputsT {
    std::array<TensorT<T>, 3> predictions;
};

using EncodedPyramid = EncodedPyramidT<float>;
using SupervisedOutputs = SupervisedOutputsT<float>;

// Residual refinement unit hosting the dynamic-filter module:
// y = x + LDO(conv3x3(x)). Removable as a whole for ablations.
template <class T>
class LdoUnit {
public:
    LdoUnit() = default;
    LdoUnit(const std::string& name, std::int64_t channels, std::int64_t kernel_size,
            std::int64_t reduction, std::uint64_t base_seed)
        : conv_(name + ".conv", channels, channels, 3, 1, 1, base_seed),
          ldo_(name + ".ldo", LdoConfig{channels, kernel_size, reduction}, base_seed) {}

    TensorT<T> forward(const TensorT<T>& x) const { return add(x, ldo_.forward(conv_.forward(x))); }

    std::vector<TensorT<T>> forward_batch(const std::vector<TensorT<T>>& xs) {
        std::vector<TensorT<T>> cs;
        cs.reserve(xs.size());
        for (const auto& x : xs) cs.push_back(conv_.forward(x));
        std::vector<TensorT<T>> fs = ldo_.forward_batch(cs);
        std::vector<TensorT<T>> out;
        out.reserve(xs.size());
        for (std::size_t i = 0; i < xs.size(); ++i) out.push_back(add(xs[i], fs[i]));
        return out;
    }

    Ldo<T>& ldo() { return ldo_; }

    void collect(ParamRefs<T>& out) {
        conv_.collect(out);
        ldo_.collect(out);
    }

private:
    nn::Conv2d<T> conv_;
    Ldo<T> ldo_;
};

// Encoder-decoder restoration network with per-scale prediction heads.
// The finest head predicts a residual added to the degraded input.
template <class T>
class MdirNet {
public:
    MdirNet() = default;

    explicit MdirNet(const NetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg.validate();
        const std::int64_t C = cfg.base_channels;
        stem1_ = nn::Conv2d<T>("stem.conv1", 3, C, 3, 1, 1, seed);
        stem2_ = nn::Conv2d<T>("stem.conv2", C, C, 3, 1, 1, seed);
        for (int i = 0; i < 3; ++i) {
            const std::int64_t Ci = cfg.stage_channels(i);
            for (std::int64_t j = 0; j < cfg.res_blocks; ++j) {
                enc_blocks_[i].emplace_back("enc" + std::to_string(i) + ".res" + std::to_string(j), Ci, seed);
                dec_blocks_[i].emplace_back("dec" + std::to_string(i) + ".res" + std::to_string(j), Ci, seed);
            }
            if (cfg.use_ldo) {
                enc_ldo_[i] = LdoUnit<T>("enc" + std::to_string(i) + ".ldo_unit", Ci,
                                         cfg.ldo_kernel_size, cfg.ldo_reduction, seed);
                dec_ldo_[i] = LdoUnit<T>("dec" + std::to_string(i) + ".ldo_unit", Ci,
                                         cfg.ldo_kernel_size, cfg.ldo_reduction, seed);
            }
            if (i < 2)
                down_[i] = nn::Conv2d<T>("down" + std::to_string(i), Ci, cfg.stage_channels(i + 1), 3, 2, 1, seed);
            if (i > 0)
                up_[i - 1] = nn::ConvTranspose2d<T>("up" + std::to_string(i), cfg.stage_channels(i),
                                                    cfg.stage_channels(i - 1), 2, 2, seed);
            // deepest stage has no previous decoder output to merge
            const std::int64_t merge_in = (i == 2) ? Ci : 2 * Ci;
            merge_[i] = nn::Conv2d<T>("dec" + std::to_string(i) + ".merge", merge_in, Ci, 1, 1, 0, seed);
            head_[i] = nn::Conv2d<T>("head" + std::to_string(i), Ci, 3, 3, 1, 1, seed, /*zero_init=*/true);
            if (cfg.use_cfe)
                cfe_[i] = CfeStage<T>("cfe" + std::to_string(i), DegradeClassifier<T>::kFeatureChannels,
                                      Ci, seed);
        }
    }

    const NetConfig& config() const { return cfg_; }

    TensorT<T> stem(const TensorT<T>& image) const {
        if (image.ndim() != 3 || image.dim(0) != 3)
            throw std::invalid_argument("net: expected RGB input [3,H,W], got " + shape_str(image.shape()));
        return stem2_.forward(relu(stem1_.forward(image)));
    }

    EncodedPyramidT<T> encode(const TensorT<T>& stem_out) const {
        check_divisible(stem_out);
        EncodedPyramidT<T> pyr;
        pyr.stem = stem_out;
        TensorT<T> x = stem_out;
        for (int i = 0; i < 3; ++i) {
            TensorT<T> t = run_blocks(enc_blocks_[i], x);
            if (cfg_.use_ldo) t = enc_ldo_[i].forward(t);
            pyr.levels[static_cast<std::size_t>(i)] = t;
            if (i < 2) x = down_[i].forward(t);
        }
        return pyr;
    }

    // embeddings may be empty (unconditioned decode); the finest prediction is
    // image + head0, intermediate heads predict the scale directly
    SupervisedOutputsT<T> decode(const EncodedPyramidT<T>& pyr,
                                 const std::array<TensorT<T>, 3>& embeddings,
                                 const TensorT<T>& image) const {
        SupervisedOutputsT<T> out;
        TensorT<T> prev;
        for (int i = 2; i >= 0; --i) {
            TensorT<T> merged = merge_input(pyr, prev, i);
            TensorT<T> d = run_blocks(dec_blocks_[i],
                                      apply_embedding(merged, embeddings[static_cast<std::size_t>(i)]));
            if (cfg_.use_ldo) d = dec_ldo_[i].forward(d);
            out.predictions[static_cast<std::size_t>(i)] =
                (i == 0) ? add(image, head_[0].forward(d)) : head_[i].forward(d);
            if (i > 0) prev = up_[i - 1].forward(d);
        }
        return out;
    }

    std::array<TensorT<T>, 3> embeddings_for(const TensorT<T>& classifier_feature, std::int64_t h,
                                             std::int64_t w) const {
        std::array<TensorT<T>, 3> emb;
        if (!cfg_.use_cfe) return emb;
        for (int i = 0; i < 3; ++i)
            emb[static_cast<std::size_t>(i)] =
                cfe_[i].embed(classifier_feature, h >> i, w >> i);
        return emb;
    }

    SupervisedOutputsT<T> forward(const TensorT<T>& image, const TensorT<T>& classifier_feature) const {
        std::array<TensorT<T>, 3> emb;
        if (cfg_.use_cfe) {
            if (!classifier_feature.defined())
                throw std::invalid_argument("net: conditioning enabled but no classifier feature given");
            emb = embeddings_for(classifier_feature, image.dim(1), image.dim(2));
        }
        return decode(encode(stem(image)), emb, image);
    }

    SupervisedOutputsT<T> forward(const TensorT<T>& image, const DegradeClassifier<T>& classifier) const {
        return forward(image, cfg_.use_cfe ? classifier.classify(image).feature : TensorT<T>());
    }

    // Training path: batch statistics inside the dynamic-filter units.
    std::vector<SupervisedOutputsT<T>> forward_batch(const std::vector<TensorT<T>>& images,
                                                     const std::vector<TensorT<T>>& features) {
        const std::size_t B = images.size();
        std::vector<TensorT<T>> x;
        x.reserve(B);
        for (const auto& img : images) {
            TensorT<T> s = stem(img);
            check_divisible(s);
            x.push_back(s);
        }
        std::array<std::vector<TensorT<T>>, 3> enc;
        for (int i = 0; i < 3; ++i) {
            std::vector<TensorT<T>> t;
            t.reserve(B);
            for (const auto& xi : x) t.push_back(run_blocks(enc_blocks_[i], xi));
            if (cfg_.use_ldo) t = enc_ldo_[i].forward_batch(t);
            enc[static_cast<std::size_t>(i)] = t;
            if (i < 2) {
                x.clear();
                for (const auto& ti : t) x.push_back(down_[i].forward(ti));
            }
        }
        std::vector<SupervisedOutputsT<T>> out(B);
        std::vector<TensorT<T>> prev(B);
        for (int i = 2; i >= 0; --i) {
            std::vector<TensorT<T>> d;
            d.reserve(B);
            for (std::size_t b = 0; b < B; ++b) {
                EncodedPyramidT<T> view;
                view.levels[static_cast<std::size_t>(i)] = enc[static_cast<std::size_t>(i)][b];
                TensorT<T> merged = merge_input(view, prev[b], i);
                TensorT<T> emb;
                if (cfg_.use_cfe)
                    emb = cfe_[i].embed(features[b], merged.dim(1), merged.dim(2));
                d.push_back(run_blocks(dec_blocks_[i], apply_embedding(merged, emb)));
            }
            if (cfg_.use_ldo) d = dec_ldo_[i].forward_batch(d);
            for (std::size_t b = 0; b < B; ++b) {
                out[b].predictions[static_cast<std::size_t>(i)] =
                    (i == 0) ? add(images[b], head_[0].forward(d[b])) : head_[i].forward(d[b]);
                if (i > 0) prev[b] = up_[i - 1].forward(d[b]);
            }
        }
        return out;
    }

    ParamRefs<T> params() {
        ParamRefs<T> refs;
        stem1_.collect(refs);
        stem2_.collect(refs);
        for (int i = 0; i < 3; ++i) {
            for (auto& b : enc_blocks_[i]) b.collect(refs);
            for (auto& b : dec_blocks_[i]) b.collect(refs);
            if (cfg_.use_ldo) {
                enc_ldo_[i].collect(refs);
                dec_ldo_[i].collect(refs);
            }
            if (i < 2) down_[i].collect(refs);
            if (i > 0) up_[i - 1].collect(refs);
            merge_[i].collect(refs);
            head_[i].collect(refs);
            if (cfg_.use_cfe) cfe_[i].collect(refs);
        }
        return refs;
    }

    LdoUnit<T>& encoder_ldo_unit(int stage) { return enc_ldo_[stage]; }

private:
    static void check_divisible(const TensorT<T>& x) {
        if (x.dim(1) % 4 != 0 || x.dim(2) % 4 != 0)
            throw std::invalid_argument("net: spatial dims must be divisible by 4, got " +
                                        shape_str(x.shape()));
    }

    static TensorT<T> run_blocks(const std::vector<nn::ResidualBlock<T>>& blocks, TensorT<T> x) {
        for (const auto& b : blocks) x = b.forward(x);
        return x;
    }

    TensorT<T> merge_input(const EncodedPyramidT<T>& pyr, const TensorT<T>& prev, int i) const {
        const TensorT<T>& e = pyr.levels[static_cast<std::size_t>(i)];
        if (i == 2) return merge_[2].forward(e);
        if (!prev.defined()) throw std::invalid_argument("net: missing previous decoder output");
        if (prev.dim(1) != e.dim(1) || prev.dim(2) != e.dim(2))
            throw std::invalid_argument("net: decoder/skip spatial mismatch at stage " + std::to_string(i));
        return merge_[i].forward(concat_channels<T>({e, prev}));
    }

    static TensorT<T> apply_embedding(const TensorT<T>& merged, const TensorT<T>& emb) {
        return emb.defined() ? cfe_inject(merged, emb) : merged;
    }

    NetConfig cfg_;
    nn::Conv2d<T> stem1_, stem2_;
    std::array<std::vector<nn::ResidualBlock<T>>, 3> enc_blocks_, dec_blocks_;
    std::array<LdoUnit<T>, 3> enc_ldo_, dec_ldo_;
    std::array<nn::Conv2d<T>, 2> down_;
    std::array<nn::ConvTranspose2d<T>, 2> up_;
    std::array<nn::Conv2d<T>, 3> merge_, head_;
    std::array<CfeStage<T>, 3> cfe_;
};

}  // namespace mdir
