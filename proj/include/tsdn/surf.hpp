#pragma once

// Superpixel random filling: paints S_s randomly chosen superpixels of a clean
// image with random solid colors and records where it painted.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "tsdn/error.hpp"
#include "tsdn/slic.hpp"
#include "tsdn/tensor.hpp"

namespace tsdn {

struct SurfConfig {
    int n_segments = 400;
    int fill_count = 50;
    std::uint64_t seed = 0;

    void validate() const {
        detail::require(n_segments >= 1, "SurfConfig: n_segments must be >= 1");
        detail::require(fill_count >= 0 && fill_count <= n_segments,
                        "SurfConfig: fill_count must lie in [0, n_segments]");
    }
};

struct SurfSample {
    ImageTensor original;
    ImageTensor distorted;
    MaskMap mask;
    std::vector<int> filled_labels;  // sorted
};

/// Process-wide count of surf_transform calls. Inference code is expected to leave it untouched.
inline std::atomic<std::uint64_t>& surf_invocation_counter() {
    static std::atomic<std::uint64_t> counter{0};
    return counter;
}

/// SplitMix64 finalizer; used to derive independent seeds from one master seed.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0) {
    std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline SurfSample surf_transform(const ImageTensor& img, const SuperpixelSegmentation& seg, const SurfConfig& cfg) {
    cfg.validate();
    detail::require(seg.height == img.height && seg.width == img.width &&
                        seg.labels.size() == img.plane_size(),
                    "surf_transform: segmentation does not match the image dimensions");
    ++surf_invocation_counter();

    std::mt19937_64 rng(cfg.seed);
    const int k = seg.num_segments;
    const int count = std::min(cfg.fill_count, k);

    // Partial Fisher-Yates: the first `count` entries are a uniform draw without replacement.
    std::vector<int> order(k);
    std::iota(order.begin(), order.end(), 0);
    for (int i = 0; i < count; ++i) {
        std::uniform_int_distribution<int> pick(i, k - 1);
        std::swap(order[i], order[pick(rng)]);
    }

    std::uniform_real_distribution<float> unit(0.0f, 1.0f);
    std::vector<float> color(static_cast<std::size_t>(k) * img.channels, 0.0f);
    std::vector<char> filled(k, 0);
    for (int i = 0; i < count; ++i) {
        const int label = order[i];
        filled[label] = 1;
        for (int c = 0; c < img.channels; ++c) color[label * img.channels + c] = unit(rng);
    }

    SurfSample out;
    out.original = img;
    out.distorted = img;
    out.mask = MaskMap(1, img.height, img.width);
    const std::size_t n = img.plane_size();
    for (std::size_t p = 0; p < n; ++p) {
        const int label = seg.labels[p];
        if (!filled[label]) continue;
        out.mask.data[p] = 1.0f;
        for (int c = 0; c < img.channels; ++c) out.distorted.data[c * n + p] = color[label * img.channels + c];
    }
    out.filled_labels.assign(order.begin(), order.begin() + count);
    std::sort(out.filled_labels.begin(), out.filled_labels.end());
    return out;
}

/// SLIC parameters SURF uses for a given config.
inline SlicParams surf_slic_params(const SurfConfig& cfg) {
    SlicParams p;
    p.n_segments = cfg.n_segments;
    return p;
}

/// Segments and distorts every image. One seed is drawn from `rng` per image, so
/// advancing the stream between epochs yields fresh distortions.
inline std::vector<SurfSample> surf_batch(const std::vector<ImageTensor>& imgs, const SurfConfig& cfg,
                                          std::mt19937_64& rng) {
    detail::require(!imgs.empty(), "surf_batch: empty image list");
    std::vector<SurfSample> out;
    out.reserve(imgs.size());
    for (const auto& img : imgs) {
        SurfConfig per = cfg;
        per.seed = rng();
        out.push_back(surf_transform(img, slic_segment(img, surf_slic_params(cfg)), per));
    }
    return out;
}

}  // namespace tsdn
