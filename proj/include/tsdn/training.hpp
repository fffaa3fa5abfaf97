#pragma once

// Loss terms, FNE targets, Adam and the training loop.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include "tsdn/checkpoint.hpp"
#include "tsdn/error.hpp"
#include "tsdn/imgproc.hpp"
#include "tsdn/network.hpp"
#include "tsdn/slic.hpp"
#include "tsdn/surf.hpp"
#include "tsdn/tensor.hpp"

namespace tsdn {

struct LossWeights {
    double lambda_r = 1.0;
    double lambda_s = 0.5;
    double lambda_g = 1.0;
    double lambda_m = 1.0;
    double lambda_f = 5e-5;

    void validate() const {
        detail::require(lambda_r >= 0 && lambda_s >= 0 && lambda_g >= 0 && lambda_m >= 0 && lambda_f >= 0,
                        "LossWeights: all weights must be >= 0");
    }
};

struct LossBreakdown {
    double l_r = 0, l_s = 0, l_g = 0, l_m = 0, l_fne = 0, total = 0;
};

/// Weighted sum of the five terms; the terms are carried through unchanged.
inline LossBreakdown total_loss(const LossBreakdown& parts, const LossWeights& w) {
    LossBreakdown out = parts;
    out.total = w.lambda_r * parts.l_r + w.lambda_s * parts.l_s + w.lambda_g * parts.l_g + w.lambda_m * parts.l_m +
                w.lambda_f * parts.l_fne;
    return out;
}

// ---------------------------------------------------------------------------
// Individual terms. Each optionally writes dL/d(second argument).

template <typename T>
T loss_reconstruction(const Tensor<T>& i, const Tensor<T>& r, Tensor<T>* grad_r = nullptr) {
    require_same_shape(i, r, "loss_reconstruction");
    detail::require(!i.empty(), "loss_reconstruction: empty tensors");
    const T n = static_cast<T>(i.size());
    T acc = 0;
    if (grad_r) *grad_r = Tensor<T>(r.channels, r.height, r.width);
    for (std::size_t k = 0; k < i.size(); ++k) {
        const T d = r.data[k] - i.data[k];
        acc += d * d;
        if (grad_r) grad_r->data[k] = 2 * d / n;
    }
    return acc / n;
}

/// 1 - mean over channels of ssim_mean.
template <typename T>
T loss_ssim(const Tensor<T>& i, const Tensor<T>& r, Tensor<T>* grad_r = nullptr, const SsimParams& p = {}) {
    require_same_shape(i, r, "loss_ssim");
    const T inv_c = T(1) / static_cast<T>(i.channels);
    T acc = 0;
    if (grad_r) *grad_r = Tensor<T>(r.channels, r.height, r.width);
    for (int c = 0; c < i.channels; ++c) {
        if (grad_r) {
            Tensor<T> g;
            acc += ssim_mean_grad(i.channel(c), r.channel(c), g, p);
            auto dst = grad_r->plane(c);
            for (std::size_t k = 0; k < g.size(); ++k) dst[k] = -inv_c * g.data[k];
        } else {
            acc += ssim_mean(i.channel(c), r.channel(c), p);
        }
    }
    return T(1) - acc * inv_c;
}

/// 1 - mean over channels of gms_mean.
template <typename T>
T loss_gms(const Tensor<T>& i, const Tensor<T>& r, Tensor<T>* grad_r = nullptr) {
    require_same_shape(i, r, "loss_gms");
    const T inv_c = T(1) / static_cast<T>(i.channels);
    T acc = 0;
    if (grad_r) *grad_r = Tensor<T>(r.channels, r.height, r.width);
    for (int c = 0; c < i.channels; ++c) {
        if (grad_r) {
            Tensor<T> g;
            acc += gms_mean_grad(i.channel(c), r.channel(c), g);
            auto dst = grad_r->plane(c);
            for (std::size_t k = 0; k < g.size(); ++k) dst[k] = -inv_c * g.data[k];
        } else {
            acc += gms_mean(i.channel(c), r.channel(c));
        }
    }
    return T(1) - acc * inv_c;
}

template <typename T>
T loss_mask(const Tensor<T>& m_gt, const Tensor<T>& m_pred, Tensor<T>* grad_pred = nullptr) {
    require_same_shape(m_gt, m_pred, "loss_mask");
    return loss_reconstruction(m_gt, m_pred, grad_pred);
}

inline constexpr double kBceClamp = 1e-7;

/// Mean binary cross-entropy with soft targets; predictions clamped to [1e-7, 1 - 1e-7].
template <typename T>
T loss_fne(const WeightVector<T>& w_gt, const WeightVector<T>& w_pred, std::vector<T>* grad_pred = nullptr) {
    detail::require(w_gt.size() == w_pred.size() && !w_gt.empty(), "loss_fne: length mismatch");
    const T lo = static_cast<T>(kBceClamp), hi = T(1) - static_cast<T>(kBceClamp);
    const T n = static_cast<T>(w_gt.size());
    if (grad_pred) grad_pred->assign(w_gt.size(), T(0));
    T acc = 0;
    for (std::size_t k = 0; k < w_gt.size(); ++k) {
        const T t = w_gt[k];
        const T p = std::clamp(w_pred[k], lo, hi);
        acc -= t * std::log(p) + (1 - t) * std::log(1 - p);
        if (grad_pred && w_pred[k] > lo && w_pred[k] < hi) (*grad_pred)[k] = (p - t) / (p * (1 - p)) / n;
    }
    return acc / n;
}

/// Per-channel normality target. Each channel of F is upscaled to the mask size and
/// min-max normalized, compared with the predicted mask by SSIM, and the distances are
/// min-max normalized and inverted so mask-like channels receive low weight.
template <typename T>
WeightVector<T> compute_w_gt(const FeatureBlock<T>& f, const Tensor<T>& m_pred, const SsimParams& p = {}) {
    detail::require(m_pred.channels == 1, "compute_w_gt: mask must be single-channel");
    detail::require(f.channels >= 1 && !m_pred.empty(), "compute_w_gt: empty input");
    const Tensor<T> up = resize_bilinear(f, m_pred.height, m_pred.width);
    const SsimAgainst<T> against_mask(m_pred, p);
    std::vector<T> d(f.channels);
    for (int c = 0; c < f.channels; ++c) d[c] = against_mask.score(minmax_normalize(up.channel(c)));
    auto w = minmax_normalize(d);
    for (auto& v : w) v = T(1) - v;
    // A degenerate (constant) distance vector carries no ranking; all targets are zero.
    if (std::all_of(w.begin(), w.end(), [](T v) { return v == T(1); })) std::fill(w.begin(), w.end(), T(0));
    return w;
}

// ---------------------------------------------------------------------------
// Per-sample objective

template <typename T>
struct SampleTargets {
    const Tensor<T>& distorted;
    const Tensor<T>& original;
    const Tensor<T>& mask;
};

/// Forward + five-term loss for one sample. When `grads` is given the gradient of the
/// total is accumulated into it (scaled by `grad_scale`). W_gt is a constant target:
/// it is computed from this forward pass unless `fixed_w_gt` is supplied.
template <typename T>
LossBreakdown sample_objective(const TsdnModel<T>& model, const SampleTargets<T>& s, const LossWeights& lw,
                               std::type_identity_t<GradSet<T>>* grads = nullptr, std::type_identity_t<T> grad_scale = T(1),
                               const std::type_identity_t<WeightVector<T>>* fixed_w_gt = nullptr,
                               std::type_identity_t<WeightVector<T>>* w_gt_out = nullptr) {
    const auto& cfg = model.config();
    ForwardTrace<T> tr;
    const auto& o = model.forward(s.distorted, tr);
    const bool want = grads != nullptr;

    LossBreakdown parts;
    OutputGrads<T> g;
    Tensor<T> gr_r, gr_s, gr_g;
    parts.l_r = static_cast<double>(loss_reconstruction(s.original, o.r_surf, want ? &gr_r : nullptr));
    parts.l_s = static_cast<double>(loss_ssim(s.original, o.r_surf, want ? &gr_s : nullptr));
    parts.l_g = static_cast<double>(loss_gms(s.original, o.r_surf, want ? &gr_g : nullptr));
    if (want) {
        g.d_r_surf = Tensor<T>(o.r_surf.channels, o.r_surf.height, o.r_surf.width);
        const T wr = static_cast<T>(lw.lambda_r) * grad_scale, ws = static_cast<T>(lw.lambda_s) * grad_scale,
                wg = static_cast<T>(lw.lambda_g) * grad_scale;
        for (std::size_t k = 0; k < g.d_r_surf.size(); ++k)
            g.d_r_surf.data[k] = wr * gr_r.data[k] + ws * gr_s.data[k] + wg * gr_g.data[k];
    }
    if (cfg.enable_dcd_a) {
        Tensor<T> gm;
        parts.l_m = static_cast<double>(loss_mask(s.mask, o.m_pred, want ? &gm : nullptr));
        if (want) {
            const T wm = static_cast<T>(lw.lambda_m) * grad_scale;
            for (auto& v : gm.data) v *= wm;
            g.d_m_pred = std::move(gm);
        }
    }
    if (cfg.enable_fne) {
        const WeightVector<T> w_gt = fixed_w_gt ? *fixed_w_gt : compute_w_gt(o.f_latent, o.m_pred);
        if (w_gt_out) *w_gt_out = w_gt;
        std::vector<T> gw;
        parts.l_fne = static_cast<double>(loss_fne(w_gt, o.w_pred, want ? &gw : nullptr));
        if (want) {
            const T wf = static_cast<T>(lw.lambda_f) * grad_scale;
            for (auto& v : gw) v *= wf;
            g.d_w_pred = std::move(gw);
        }
    }
    if (want) model.backward(tr, g, *grads);
    return total_loss(parts, lw);
}

// ---------------------------------------------------------------------------
// Optimizer

template <typename T>
class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
        detail::require(lr >= 0, "Adam: learning rate must be >= 0");
    }

    void step(ParamSet<T>& params, const GradSet<T>& grads) {
        if (m_.empty()) {
            m_ = zero_grads(params);
            v_ = zero_grads(params);
        }
        ++t_;
        const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& p = params[i].value;
            const auto& g = grads[i];
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t k = 0; k < p.size(); ++k) {
                m[k] = static_cast<T>(b1_ * m[k] + (1 - b1_) * g[k]);
                v[k] = static_cast<T>(b2_ * v[k] + (1 - b2_) * g[k] * g[k]);
                const double mh = m[k] / c1, vh = v[k] / c2;
                p[k] = static_cast<T>(p[k] - lr_ * mh / (std::sqrt(vh) + eps_));
            }
        }
    }

    double learning_rate() const noexcept { return lr_; }
    long steps() const noexcept { return t_; }

private:
    double lr_, b1_, b2_, eps_;
    long t_ = 0;
    GradSet<T> m_, v_;
};

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
    double learning_rate = 7e-5;
    int epochs = 200;
    int batch_size = 8;
    std::uint64_t seed = 0;
    SurfConfig surf;
    LossWeights weights;
    bool detach_fne_target = true;
    /// When false the network sees clean images and an all-zero target mask.
    bool use_surf = true;

    void validate() const {
        detail::require(learning_rate >= 0 && std::isfinite(learning_rate), "TrainConfig: learning_rate must be >= 0");
        detail::require(epochs >= 0, "TrainConfig: epochs must be >= 0");
        detail::require(batch_size >= 1, "TrainConfig: batch_size must be >= 1");
        detail::require(detach_fne_target,
                        "TrainConfig: detach_fne_target=false is not supported (the FNE target is a constant)");
        surf.validate();
        weights.validate();
    }
};

template <typename T>
void check_finite(const LossBreakdown& b) {
    const std::pair<const char*, double> terms[] = {{"l_r", b.l_r},     {"l_s", b.l_s},   {"l_g", b.l_g},
                                                    {"l_m", b.l_m},     {"l_fne", b.l_fne}, {"total", b.total}};
    for (const auto& [name, v] : terms)
        if (!std::isfinite(v)) throw TrainingDiverged(name, v);
}

/// One optimizer step on a batch: gradients are averaged over the batch, the
/// returned breakdown is the batch mean evaluated before the update.
inline LossBreakdown train_step(TsdnModel<float>& model, Adam<float>& opt, const std::vector<SurfSample>& batch,
                                const TrainConfig& cfg) {
    detail::require(!batch.empty(), "train_step: empty batch");
    GradSet<float> grads = zero_grads(model.params());
    const float scale = 1.0f / static_cast<float>(batch.size());
    LossBreakdown mean;
    for (const auto& s : batch) {
        const auto b = sample_objective(model, SampleTargets<float>{s.distorted, s.original, s.mask}, cfg.weights,
                                        &grads, scale);
        check_finite<float>(b);
        mean.l_r += b.l_r;
        mean.l_s += b.l_s;
        mean.l_g += b.l_g;
        mean.l_m += b.l_m;
        mean.l_fne += b.l_fne;
    }
    const double n = static_cast<double>(batch.size());
    mean.l_r /= n;
    mean.l_s /= n;
    mean.l_g /= n;
    mean.l_m /= n;
    mean.l_fne /= n;
    mean = total_loss(mean, cfg.weights);
    check_finite<float>(mean);
    opt.step(model.params(), grads);
    return mean;
}

struct LossRecord {
    int epoch = 0;
    int step = 0;
    LossBreakdown loss;
};

struct TrainResult {
    std::filesystem::path checkpoint;
    std::filesystem::path loss_log;
    std::vector<LossRecord> history;
};

inline constexpr const char* kLossCsvHeader = "epoch,step,l_r,l_s,l_g,l_m,l_fne,total";

inline std::string format_loss_row(const LossRecord& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%d,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", r.epoch, r.step, r.loss.l_r, r.loss.l_s,
                  r.loss.l_g, r.loss.l_m, r.loss.l_fne, r.loss.total);
    return buf;
}

/// Mean total loss per epoch, in epoch order.
inline std::vector<double> epoch_means(const std::vector<LossRecord>& history) {
    std::vector<double> sums, counts;
    for (const auto& r : history) {
        if (r.epoch >= static_cast<int>(sums.size())) {
            sums.resize(r.epoch + 1, 0.0);
            counts.resize(r.epoch + 1, 0.0);
        }
        sums[r.epoch] += r.loss.total;
        counts[r.epoch] += 1;
    }
    for (std::size_t i = 0; i < sums.size(); ++i) sums[i] = counts[i] > 0 ? sums[i] / counts[i] : 0.0;
    return sums;
}

/// Trains from scratch on clean images. Every step re-draws SURF distortions, the
/// checkpoint is rewritten after each epoch and every step is appended to the loss log.
/// On divergence the log keeps all completed steps and TrainingDiverged propagates.
inline TrainResult train_loop(const std::vector<ImageTensor>& dataset, const NetworkConfig& net_cfg,
                              const TrainConfig& cfg, const std::filesystem::path& out_dir,
                              const std::function<void(const LossRecord&)>& on_step = {},
                              TsdnModel<float>* model_out = nullptr) {
    cfg.validate();
    net_cfg.validate();
    detail::require(!dataset.empty(), "train_loop: empty dataset");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + out_dir.string() + ": " + ec.message());

    TrainResult result;
    result.checkpoint = out_dir / "checkpoint.tsdn";
    result.loss_log = out_dir / "loss.csv";

    TsdnModel<float> model(net_cfg, mix_seed(cfg.seed, 0));
    Adam<float> opt(cfg.learning_rate);
    std::mt19937_64 rng(mix_seed(cfg.seed, 1));

    std::ofstream log(result.loss_log, std::ios::trunc);
    if (!log) throw IoError("cannot write " + result.loss_log.string());
    log << kLossCsvHeader << '\n';
    save_checkpoint(model, result.checkpoint);

    // Segmentations depend only on the image, so they are computed once.
    std::vector<SuperpixelSegmentation> segs;
    if (cfg.use_surf) {
        segs.reserve(dataset.size());
        for (const auto& img : dataset) segs.push_back(slic_segment(img, surf_slic_params(cfg.surf)));
    }

    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        int step = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++step) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::vector<SurfSample> batch;
            for (std::size_t j = start; j < end; ++j) {
                const std::size_t idx = order[j];
                const std::uint64_t seed = rng();
                if (cfg.use_surf) {
                    SurfConfig sc = cfg.surf;
                    sc.seed = seed;
                    batch.push_back(surf_transform(dataset[idx], segs[idx], sc));
                } else {
                    const auto& img = dataset[idx];
                    batch.push_back({img, img, MaskMap(1, img.height, img.width), {}});
                }
            }
            LossRecord rec{epoch, step, {}};
            rec.loss = train_step(model, opt, batch, cfg);
            result.history.push_back(rec);
            log << format_loss_row(rec) << '\n';
            log.flush();
            if (on_step) on_step(rec);
        }
        save_checkpoint(model, result.checkpoint);
    }
    if (model_out) *model_out = std::move(model);
    return result;
}

}  // namespace tsdn
