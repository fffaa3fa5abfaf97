#pragma once

// Two-stream decoder network.
//
//   image -> encoder (5 stride-2 stages) -> 1x1 reduce -> F (C x H/32 x W/32)
//   F -> abnormality decoder -> M' (predicted defect mask)
//   F -> normality estimator -> W' (per-channel weight in (0,1))
//   W' * F -> normality decoder -> R (reconstruction of the clean image)
//
// Both decoders may receive raw encoder features through skip connections;
// only the bottleneck is gated.

#include <array>
#include <atomic>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "tsdn/error.hpp"
#include "tsdn/layers.hpp"
#include "tsdn/tensor.hpp"

namespace tsdn {

inline constexpr int kEncoderStages = 5;
inline constexpr int kDownsampleFactor = 32;

struct NetworkConfig {
    int input_h = 64;
    int input_w = 64;
    int base_channels = 8;
    int latent_channels = 16;
    bool use_skips_dcd_a = true;
    bool use_skips_dcd_n = true;
    bool enable_dcd_a = true;
    bool enable_fne = true;

    void validate() const {
        detail::require(input_h > 0 && input_w > 0 && input_h % kDownsampleFactor == 0 &&
                            input_w % kDownsampleFactor == 0,
                        "NetworkConfig: input size must be a positive multiple of 32");
        detail::require(base_channels >= 1, "NetworkConfig: base_channels must be >= 1");
        detail::require(latent_channels >= 1, "NetworkConfig: latent_channels must be >= 1");
        detail::require(enable_dcd_a || !enable_fne,
                        "NetworkConfig: the normality estimator needs the abnormality decoder (enable_dcd_a)");
    }

    int latent_h() const { return input_h / kDownsampleFactor; }
    int latent_w() const { return input_w / kDownsampleFactor; }
    int stage_channels(int stage) const { return base_channels << stage; }

    friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

template <typename T>
struct FeaturePyramid {
    std::array<Tensor<T>, kEncoderStages> stages;
};

template <typename T>
using FeatureBlock = Tensor<T>;
template <typename T>
using WeightVector = std::vector<T>;

template <typename T>
struct ModelOutputs {
    Tensor<T> m_pred;  // empty when the abnormality decoder is disabled
    WeightVector<T> w_pred;
    FeatureBlock<T> f_latent;
    FeatureBlock<T> f_nml;
    Tensor<T> r_surf;
};

/// Counts abnormality-decoder evaluations (inference must not need any).
inline std::atomic<std::uint64_t>& dcd_a_invocation_counter() {
    static std::atomic<std::uint64_t> counter{0};
    return counter;
}

/// F_nml[c] = w[c] * F[c].
template <typename T>
FeatureBlock<T> apply_normality_weights(const FeatureBlock<T>& f, const WeightVector<T>& w) {
    detail::require(static_cast<int>(w.size()) == f.channels,
                    "apply_normality_weights: weight length " + std::to_string(w.size()) + " != channels " +
                        std::to_string(f.channels));
    FeatureBlock<T> out = f;
    for (int c = 0; c < f.channels; ++c)
        for (auto& v : out.plane(c)) v *= w[c];
    return out;
}

// ---------------------------------------------------------------------------
// Composite units

/// conv -> group norm -> SiLU
template <typename T>
struct ConvUnit {
    Conv2d<T> conv;
    GroupNorm<T> norm;

    struct Cache {
        Tensor<T> x;
        std::vector<T> cols;
        typename GroupNorm<T>::Cache gn;
        Tensor<T> pre;
    };

    static ConvUnit make(ParamSet<T>& ps, const std::string& name, int cin, int cout, int stride) {
        return {Conv2d<T>::make(ps, name + ".conv", cin, cout, 3, stride, 1), GroupNorm<T>::make(ps, name + ".gn", cout)};
    }

    void init(ParamSet<T>& ps, std::mt19937_64& rng) const { conv.init(ps, rng); }

    Tensor<T> forward(const ParamSet<T>& ps, const Tensor<T>& x, Cache& c) const {
        c.x = x;
        c.pre = norm.forward(ps, conv.forward(ps, x, c.cols), c.gn);
        Tensor<T> y = c.pre;
        silu_inplace(y.data);
        return y;
    }

    Tensor<T> backward(const ParamSet<T>& ps, GradSet<T>& gs, const Cache& c, Tensor<T> dy) const {
        silu_backward_inplace(c.pre.data, dy.data);
        return conv.backward(ps, gs, c.x, c.cols, norm.backward(ps, gs, c.gn, dy));
    }
};

/// transposed conv (x2) -> group norm -> SiLU
template <typename T>
struct UpUnit {
    ConvTranspose2d<T> up;
    GroupNorm<T> norm;

    struct Cache {
        Tensor<T> x;
        typename GroupNorm<T>::Cache gn;
        Tensor<T> pre;
    };

    static UpUnit make(ParamSet<T>& ps, const std::string& name, int cin, int cout) {
        return {ConvTranspose2d<T>::make(ps, name + ".deconv", cin, cout, 4, 2, 1),
                GroupNorm<T>::make(ps, name + ".gn", cout)};
    }

    void init(ParamSet<T>& ps, std::mt19937_64& rng) const { up.init(ps, rng); }

    Tensor<T> forward(const ParamSet<T>& ps, const Tensor<T>& x, Cache& c) const {
        c.x = x;
        c.pre = norm.forward(ps, up.forward(ps, x), c.gn);
        Tensor<T> y = c.pre;
        silu_inplace(y.data);
        return y;
    }

    Tensor<T> backward(const ParamSet<T>& ps, GradSet<T>& gs, const Cache& c, Tensor<T> dy) const {
        silu_backward_inplace(c.pre.data, dy.data);
        return up.backward(ps, gs, c.x, norm.backward(ps, gs, c.gn, dy));
    }
};

// ---------------------------------------------------------------------------
// Encoder

template <typename T>
struct Encoder {
    std::array<ConvUnit<T>, 2 * kEncoderStages> units;

    struct Trace {
        std::array<typename ConvUnit<T>::Cache, 2 * kEncoderStages> units;
    };

    static Encoder make(ParamSet<T>& ps, const NetworkConfig& cfg) {
        Encoder e;
        int cin = 3;
        for (int s = 0; s < kEncoderStages; ++s) {
            const int c = cfg.stage_channels(s);
            const std::string name = "encoder.stage" + std::to_string(s + 1);
            e.units[2 * s] = ConvUnit<T>::make(ps, name + ".down", cin, c, 2);
            e.units[2 * s + 1] = ConvUnit<T>::make(ps, name + ".refine", c, c, 1);
            cin = c;
        }
        return e;
    }

    void init(ParamSet<T>& ps, std::mt19937_64& rng) const {
        for (const auto& u : units) u.init(ps, rng);
    }

    FeaturePyramid<T> forward(const ParamSet<T>& ps, const Tensor<T>& img, Trace& tr) const {
        FeaturePyramid<T> pyr;
        const Tensor<T>* x = &img;
        for (int s = 0; s < kEncoderStages; ++s) {
            Tensor<T> mid = units[2 * s].forward(ps, *x, tr.units[2 * s]);
            pyr.stages[s] = units[2 * s + 1].forward(ps, mid, tr.units[2 * s + 1]);
            x = &pyr.stages[s];
        }
        return pyr;
    }

    /// d_stages holds dL/d(stage output) for every stage; consumed in place.
    void backward(const ParamSet<T>& ps, GradSet<T>& gs, const Trace& tr,
                  std::array<Tensor<T>, kEncoderStages>& d_stages) const {
        for (int s = kEncoderStages - 1; s >= 0; --s) {
            Tensor<T> d = units[2 * s + 1].backward(ps, gs, tr.units[2 * s + 1], std::move(d_stages[s]));
            d = units[2 * s].backward(ps, gs, tr.units[2 * s], std::move(d));
            if (s > 0) {
                auto& prev = d_stages[s - 1];
                if (prev.empty()) prev = Tensor<T>(d.channels, d.height, d.width);
                for (std::size_t i = 0; i < d.size(); ++i) prev.data[i] += d.data[i];
            }
        }
    }
};

// ---------------------------------------------------------------------------
// Decoder (shared structure of both streams)

template <typename T>
struct Decoder {
    static constexpr std::array<int, kEncoderStages> kWidthMultiplier = {8, 4, 2, 1, 1};

    std::array<UpUnit<T>, kEncoderStages> ups;
    std::array<ConvUnit<T>, kEncoderStages> fuses;
    Conv2d<T> head;
    bool use_skips = true;

    struct Trace {
        std::array<typename UpUnit<T>::Cache, kEncoderStages> ups;
        std::array<typename ConvUnit<T>::Cache, kEncoderStages> fuses;
        std::vector<T> head_cols;
        Tensor<T> head_in;
        Tensor<T> out;
    };

    /// Encoder stage concatenated after up-block k, or -1 (last block runs at full resolution).
    static int skip_stage(int k) { return k < kEncoderStages - 1 ? kEncoderStages - 2 - k : -1; }

    static Decoder make(ParamSet<T>& ps, const NetworkConfig& cfg, const std::string& name, int out_channels,
                        bool use_skips) {
        Decoder d;
        d.use_skips = use_skips;
        int cin = cfg.latent_channels;
        for (int k = 0; k < kEncoderStages; ++k) {
            const int c = cfg.base_channels * kWidthMultiplier[k];
            const std::string blk = name + ".block" + std::to_string(k + 1);
            d.ups[k] = UpUnit<T>::make(ps, blk, cin, c);
            const int skip = skip_stage(k);
            const int extra = (use_skips && skip >= 0) ? cfg.stage_channels(skip) : 0;
            d.fuses[k] = ConvUnit<T>::make(ps, blk + ".fuse", c + extra, c, 1);
            cin = c;
        }
        d.head = Conv2d<T>::make(ps, name + ".head", cin, out_channels, 3, 1, 1);
        return d;
    }

    void init(ParamSet<T>& ps, std::mt19937_64& rng) const {
        for (int k = 0; k < kEncoderStages; ++k) {
            ups[k].init(ps, rng);
            fuses[k].init(ps, rng);
        }
        head.init(ps, rng, 1.0);
    }

    Tensor<T> forward(const ParamSet<T>& ps, const FeatureBlock<T>& f, const FeaturePyramid<T>& pyr,
                      Trace& tr) const {
        Tensor<T> x = f;
        for (int k = 0; k < kEncoderStages; ++k) {
            x = ups[k].forward(ps, x, tr.ups[k]);
            const int skip = skip_stage(k);
            if (use_skips && skip >= 0) x = concat_channels(x, pyr.stages[skip]);
            x = fuses[k].forward(ps, x, tr.fuses[k]);
        }
        tr.head_in = std::move(x);
        tr.out = head.forward(ps, tr.head_in, tr.head_cols);
        sigmoid_inplace(tr.out.data);
        return tr.out;
    }

    /// Returns dL/dF; skip gradients are added into d_stages.
    FeatureBlock<T> backward(const ParamSet<T>& ps, GradSet<T>& gs, const Trace& tr, Tensor<T> dy,
                             std::array<Tensor<T>, kEncoderStages>& d_stages) const {
        sigmoid_backward_inplace(tr.out.data, dy.data);
        Tensor<T> d = head.backward(ps, gs, tr.head_in, tr.head_cols, dy);
        for (int k = kEncoderStages - 1; k >= 0; --k) {
            d = fuses[k].backward(ps, gs, tr.fuses[k], std::move(d));
            const int skip = skip_stage(k);
            if (use_skips && skip >= 0) {
                const int c_up = ups[k].up.cout;
                const std::size_t split = static_cast<std::size_t>(c_up) * d.plane_size();
                auto& ds = d_stages[skip];
                if (ds.empty()) ds = Tensor<T>(d.channels - c_up, d.height, d.width);
                for (std::size_t i = 0; i < ds.size(); ++i) ds.data[i] += d.data[split + i];
                Tensor<T> head_part(c_up, d.height, d.width);
                std::copy(d.data.begin(), d.data.begin() + static_cast<std::ptrdiff_t>(split), head_part.data.begin());
                d = std::move(head_part);
            }
            d = ups[k].backward(ps, gs, tr.ups[k], std::move(d));
        }
        return d;
    }
};

// ---------------------------------------------------------------------------
// Feature normality estimator: conv -> flatten -> FC+ReLU -> FC+ReLU -> FC -> sigmoid

template <typename T>
struct NormalityEstimator {
    Conv2d<T> conv;
    Linear<T> fc1, fc2, fc3;

    struct Trace {
        Tensor<T> x;
        std::vector<T> cols;
        std::vector<T> flat, h1_pre, h1, h2_pre, h2, out;
    };

    static NormalityEstimator make(ParamSet<T>& ps, const NetworkConfig& cfg) {
        const int c = cfg.latent_channels;
        const int flat = c * cfg.latent_h() * cfg.latent_w();
        return {Conv2d<T>::make(ps, "fne.conv", c, c, 3, 1, 1), Linear<T>::make(ps, "fne.fc1", flat, 4 * c),
                Linear<T>::make(ps, "fne.fc2", 4 * c, 2 * c), Linear<T>::make(ps, "fne.fc3", 2 * c, c)};
    }

    void init(ParamSet<T>& ps, std::mt19937_64& rng) const {
        conv.init(ps, rng, 1.0);
        fc1.init(ps, rng);
        fc2.init(ps, rng);
        fc3.init(ps, rng, 1.0);
    }

    WeightVector<T> forward(const ParamSet<T>& ps, const FeatureBlock<T>& f, Trace& tr) const {
        tr.x = f;
        tr.flat = conv.forward(ps, f, tr.cols).data;
        tr.h1_pre = fc1.forward(ps, tr.flat);
        tr.h1 = tr.h1_pre;
        relu_inplace(tr.h1);
        tr.h2_pre = fc2.forward(ps, tr.h1);
        tr.h2 = tr.h2_pre;
        relu_inplace(tr.h2);
        tr.out = fc3.forward(ps, tr.h2);
        sigmoid_inplace(tr.out);
        return tr.out;
    }

    FeatureBlock<T> backward(const ParamSet<T>& ps, GradSet<T>& gs, const Trace& tr, std::vector<T> dw) const {
        sigmoid_backward_inplace(tr.out, dw);
        auto d = fc3.backward(ps, gs, tr.h2, dw);
        relu_backward_inplace(tr.h2_pre, d);
        d = fc2.backward(ps, gs, tr.h1, d);
        relu_backward_inplace(tr.h1_pre, d);
        d = fc1.backward(ps, gs, tr.flat, d);
        Tensor<T> dconv(tr.x.channels, tr.x.height, tr.x.width);
        dconv.data = std::move(d);
        return conv.backward(ps, gs, tr.x, tr.cols, dconv);
    }
};

// ---------------------------------------------------------------------------
// Full model

template <typename T>
struct ForwardTrace {
    typename Encoder<T>::Trace encoder;
    FeaturePyramid<T> pyramid;
    std::vector<T> reduce_cols;
    typename Decoder<T>::Trace dcd_a;
    typename NormalityEstimator<T>::Trace fne;
    typename Decoder<T>::Trace dcd_n;
    ModelOutputs<T> out;
};

/// dL/d(output) for each model head; empty members mean "no loss on this head".
template <typename T>
struct OutputGrads {
    Tensor<T> d_m_pred;
    std::vector<T> d_w_pred;
    Tensor<T> d_r_surf;
};

template <typename T>
class TsdnModel {
public:
    TsdnModel(const NetworkConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        build();
        std::mt19937_64 rng(seed);
        encoder_.init(params_, rng);
        reduce_.init(params_, rng, 1.0);
        if (cfg_.enable_dcd_a) dcd_a_.init(params_, rng);
        if (cfg_.enable_fne) fne_.init(params_, rng);
        dcd_n_.init(params_, rng);
    }

    /// Adopts an existing parameter set; names and shapes must match the layout of `cfg`.
    TsdnModel(const NetworkConfig& cfg, ParamSet<T> params) : cfg_(cfg) {
        build();
        detail::require(params.size() == params_.size(), "TsdnModel: parameter count does not match the config");
        for (std::size_t i = 0; i < params.size(); ++i)
            detail::require(params[i].name == params_[i].name && params[i].shape == params_[i].shape,
                            "TsdnModel: parameter '" + params[i].name + "' does not match the config layout");
        params_ = std::move(params);
    }

    const NetworkConfig& config() const noexcept { return cfg_; }
    ParamSet<T>& params() noexcept { return params_; }
    const ParamSet<T>& params() const noexcept { return params_; }

    template <typename U>
    TsdnModel<U> cast() const {
        return TsdnModel<U>(cfg_, params_.template cast<U>());
    }

    FeaturePyramid<T> encoder_forward(const Tensor<T>& img) const {
        typename Encoder<T>::Trace tr;
        return encode(img, tr);
    }

    FeatureBlock<T> reduce_channels(const Tensor<T>& deepest) const {
        std::vector<T> cols;
        return reduce_.forward(params_, deepest, cols);
    }

    Tensor<T> dcd_a_forward(const FeatureBlock<T>& f, const FeaturePyramid<T>& pyr) const {
        detail::require(cfg_.enable_dcd_a, "dcd_a_forward: abnormality decoder disabled in this config");
        typename Decoder<T>::Trace tr;
        return run_dcd_a(f, pyr, tr);
    }

    WeightVector<T> fne_forward(const FeatureBlock<T>& f) const {
        detail::require(cfg_.enable_fne, "fne_forward: normality estimator disabled in this config");
        check_latent(f);
        typename NormalityEstimator<T>::Trace tr;
        return fne_.forward(params_, f, tr);
    }

    Tensor<T> dcd_n_forward(const FeatureBlock<T>& f_nml, const FeaturePyramid<T>& pyr) const {
        check_latent(f_nml);
        check_pyramid(pyr);
        typename Decoder<T>::Trace tr;
        return dcd_n_.forward(params_, f_nml, pyr, tr);
    }

    ModelOutputs<T> forward(const Tensor<T>& img) const {
        ForwardTrace<T> tr;
        forward(img, tr);
        return std::move(tr.out);
    }

    const ModelOutputs<T>& forward(const Tensor<T>& img, ForwardTrace<T>& tr) const {
        tr.pyramid = encode(img, tr.encoder);
        auto& o = tr.out;
        o.f_latent = reduce_.forward(params_, tr.pyramid.stages[kEncoderStages - 1], tr.reduce_cols);
        o.m_pred = cfg_.enable_dcd_a ? run_dcd_a(o.f_latent, tr.pyramid, tr.dcd_a) : Tensor<T>{};
        o.w_pred = cfg_.enable_fne ? fne_.forward(params_, o.f_latent, tr.fne)
                                   : WeightVector<T>(cfg_.latent_channels, T(1));
        o.f_nml = apply_normality_weights(o.f_latent, o.w_pred);
        o.r_surf = dcd_n_.forward(params_, o.f_nml, tr.pyramid, tr.dcd_n);
        return o;
    }

    /// Reconstruction only: encoder, estimator gate and normality decoder. The
    /// abnormality decoder is skipped because W' depends on F alone.
    Tensor<T> reconstruct(const Tensor<T>& img) const {
        typename Encoder<T>::Trace etr;
        const FeaturePyramid<T> pyr = encode(img, etr);
        const FeatureBlock<T> f = reduce_channels(pyr.stages[kEncoderStages - 1]);
        const WeightVector<T> w = cfg_.enable_fne ? fne_forward(f) : WeightVector<T>(cfg_.latent_channels, T(1));
        return dcd_n_forward(apply_normality_weights(f, w), pyr);
    }

    /// Accumulates dL/dparams into `gs` given gradients on the model outputs.
    void backward(const ForwardTrace<T>& tr, const OutputGrads<T>& g, GradSet<T>& gs) const {
        std::array<Tensor<T>, kEncoderStages> d_stages;
        const auto& o = tr.out;

        FeatureBlock<T> d_f(o.f_latent.channels, o.f_latent.height, o.f_latent.width);
        std::vector<T> d_w(cfg_.latent_channels, T(0));
        if (!g.d_r_surf.empty()) {
            const FeatureBlock<T> d_nml = dcd_n_.backward(params_, gs, tr.dcd_n, g.d_r_surf, d_stages);
            for (int c = 0; c < d_f.channels; ++c) {
                const auto dn = d_nml.plane(c);
                const auto fl = o.f_latent.plane(c);
                auto df = d_f.plane(c);
                T acc = 0;
                for (std::size_t i = 0; i < dn.size(); ++i) {
                    df[i] += o.w_pred[c] * dn[i];
                    acc += dn[i] * fl[i];
                }
                d_w[c] += acc;
            }
        }
        if (cfg_.enable_fne) {
            if (!g.d_w_pred.empty())
                for (int c = 0; c < cfg_.latent_channels; ++c) d_w[c] += g.d_w_pred[c];
            const FeatureBlock<T> d = fne_.backward(params_, gs, tr.fne, d_w);
            for (std::size_t i = 0; i < d.size(); ++i) d_f.data[i] += d.data[i];
        }
        if (cfg_.enable_dcd_a && !g.d_m_pred.empty()) {
            const FeatureBlock<T> d = dcd_a_.backward(params_, gs, tr.dcd_a, g.d_m_pred, d_stages);
            for (std::size_t i = 0; i < d.size(); ++i) d_f.data[i] += d.data[i];
        }
        const auto& deepest = tr.pyramid.stages[kEncoderStages - 1];
        const Tensor<T> d_deep = reduce_.backward(params_, gs, deepest, tr.reduce_cols, d_f);
        auto& dd = d_stages[kEncoderStages - 1];
        if (dd.empty()) dd = Tensor<T>(d_deep.channels, d_deep.height, d_deep.width);
        for (std::size_t i = 0; i < d_deep.size(); ++i) dd.data[i] += d_deep.data[i];
        for (int s = 0; s < kEncoderStages; ++s)
            if (d_stages[s].empty()) {
                const auto& st = tr.pyramid.stages[s];
                d_stages[s] = Tensor<T>(st.channels, st.height, st.width);
            }
        encoder_.backward(params_, gs, tr.encoder, d_stages);
    }

private:
    void build() {
        cfg_.validate();
        encoder_ = Encoder<T>::make(params_, cfg_);
        reduce_ = Conv2d<T>::make(params_, "reduce", cfg_.stage_channels(kEncoderStages - 1), cfg_.latent_channels,
                                  1, 1, 0);
        if (cfg_.enable_dcd_a) dcd_a_ = Decoder<T>::make(params_, cfg_, "dcd_a", 1, cfg_.use_skips_dcd_a);
        if (cfg_.enable_fne) fne_ = NormalityEstimator<T>::make(params_, cfg_);
        dcd_n_ = Decoder<T>::make(params_, cfg_, "dcd_n", 3, cfg_.use_skips_dcd_n);
    }

    FeaturePyramid<T> encode(const Tensor<T>& img, typename Encoder<T>::Trace& tr) const {
        detail::require(img.channels == 3 && img.height == cfg_.input_h && img.width == cfg_.input_w,
                        "encoder_forward: expected (3," + std::to_string(cfg_.input_h) + "," +
                            std::to_string(cfg_.input_w) + ") input, got " + shape_str(img));
        return encoder_.forward(params_, img, tr);
    }

    void check_latent(const FeatureBlock<T>& f) const {
        detail::require(f.channels == cfg_.latent_channels && f.height == cfg_.latent_h() && f.width == cfg_.latent_w(),
                        "latent block has shape " + shape_str(f) + ", expected (" +
                            std::to_string(cfg_.latent_channels) + "," + std::to_string(cfg_.latent_h()) + "," +
                            std::to_string(cfg_.latent_w()) + ")");
    }

    void check_pyramid(const FeaturePyramid<T>& pyr) const {
        for (int s = 0; s < kEncoderStages; ++s) {
            const auto& st = pyr.stages[s];
            detail::require(st.channels == cfg_.stage_channels(s) && st.height == (cfg_.input_h >> (s + 1)) &&
                                st.width == (cfg_.input_w >> (s + 1)),
                            "feature pyramid stage " + std::to_string(s + 1) + " has shape " + shape_str(st));
        }
    }

    Tensor<T> run_dcd_a(const FeatureBlock<T>& f, const FeaturePyramid<T>& pyr,
                        typename Decoder<T>::Trace& tr) const {
        check_latent(f);
        check_pyramid(pyr);
        ++dcd_a_invocation_counter();
        return dcd_a_.forward(params_, f, pyr, tr);
    }

    NetworkConfig cfg_;
    ParamSet<T> params_;
    Encoder<T> encoder_;
    Conv2d<T> reduce_;
    Decoder<T> dcd_a_;
    NormalityEstimator<T> fne_;
    Decoder<T> dcd_n_;
};

}  // namespace tsdn
