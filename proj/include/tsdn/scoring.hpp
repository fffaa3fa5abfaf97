#pragma once

// Score maps, image scores and ROC AUC.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tsdn/checkpoint.hpp"
#include "tsdn/error.hpp"
#include "tsdn/imgproc.hpp"
#include "tsdn/tensor.hpp"

namespace tsdn {

struct ScoreMaps {
    MaskMap s_map;    // blurred squared error
    MaskMap s_final;  // s_map min-max normalized per image
};

/// Blur width for a given input size: 4 at 352 pixels, scaled linearly, at least 1.
inline double default_score_sigma(int size) { return std::max(1.0, 4.0 * static_cast<double>(size) / 352.0); }

inline ScoreMaps pixel_score_map(const ImageTensor& i, const ImageTensor& r, double sigma) {
    require_same_shape(i, r, "pixel_score_map");
    detail::require(!i.empty(), "pixel_score_map: empty image");
    detail::require(sigma >= 0 && std::isfinite(sigma), "pixel_score_map: sigma must be >= 0");
    MaskMap diff(1, i.height, i.width);
    const std::size_t hw = static_cast<std::size_t>(i.height) * i.width;
    for (int c = 0; c < i.channels; ++c) {
        const auto a = i.plane(c);
        const auto b = r.plane(c);
        for (std::size_t k = 0; k < hw; ++k) {
            const float d = a[k] - b[k];
            diff.data[k] += d * d;
        }
    }
    const float inv = 1.0f / static_cast<float>(i.channels);
    for (auto& v : diff.data) v *= inv;
    ScoreMaps out;
    out.s_map = gaussian_blur(diff, sigma);
    out.s_final = minmax_normalize(out.s_map);
    return out;
}

inline double image_score(const MaskMap& s_map) {
    detail::require(!s_map.empty(), "image_score: empty map");
    return static_cast<double>(*std::max_element(s_map.data.begin(), s_map.data.end()));
}

inline std::vector<double> normalize_scores(const std::vector<double>& scores) {
    return minmax_normalize(scores);
}

/// Mann-Whitney AUC, ties counted as one half. Exact: wins and ties are counted as
/// integers before the single final division.
template <typename S>
double roc_auc(const std::vector<S>& scores, const std::vector<int>& labels) {
    detail::require(scores.size() == labels.size(), "roc_auc: scores and labels differ in length");
    std::vector<std::pair<S, int>> v(scores.size());
    std::uint64_t n_pos = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        detail::require(labels[i] == 0 || labels[i] == 1, "roc_auc: labels must be 0 or 1");
        detail::require(!std::isnan(static_cast<double>(scores[i])), "roc_auc: NaN score");
        v[i] = {scores[i], labels[i]};
        n_pos += static_cast<std::uint64_t>(labels[i]);
    }
    const std::uint64_t n_neg = v.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) throw UndefinedMetric("roc_auc: both classes are required");
    std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    // twice the number of (positive, negative) wins, ties count 1
    unsigned __int128 twice = 0;
    std::uint64_t neg_below = 0;
    for (std::size_t i = 0; i < v.size();) {
        std::size_t j = i;
        std::uint64_t pos = 0, neg = 0;
        while (j < v.size() && v[j].first == v[i].first) {
            (v[j].second ? pos : neg) += 1;
            ++j;
        }
        twice += static_cast<unsigned __int128>(pos) * (2 * neg_below + neg);
        neg_below += neg;
        i = j;
    }
    const long double denom = 2.0L * static_cast<long double>(n_pos) * static_cast<long double>(n_neg);
    return static_cast<double>(static_cast<long double>(twice) / denom);
}

// ---------------------------------------------------------------------------
// Evaluation

struct ScoredImage {
    std::string name;
    std::string category;  // defect type, "good" for normals
    MaskMap s_map;         // raw, before any normalization
    double image_score = 0;
    std::optional<MaskMap> gt_mask;
    std::optional<int> gt_label;  // 0 normal, 1 abnormal
};

enum class PixelAucMode { pooled, per_image_mean };

struct MetricResult {
    std::optional<double> value;
    std::string note;  // reason when unavailable
};

struct EvalReport {
    MetricResult pixel_auc;
    MetricResult image_auc;
    std::map<std::string, MetricResult> category_pixel_auc;
    std::map<std::string, MetricResult> category_image_auc;
    std::size_t n_images = 0;
};

namespace detail {

inline MetricResult guarded_auc(const std::vector<float>& s, const std::vector<int>& l) {
    try {
        return {roc_auc(s, l), {}};
    } catch (const UndefinedMetric&) {
        return {std::nullopt, "single class"};
    }
}

inline MetricResult guarded_auc(const std::vector<double>& s, const std::vector<int>& l) {
    try {
        return {roc_auc(s, l), {}};
    } catch (const UndefinedMetric&) {
        return {std::nullopt, "single class"};
    }
}

inline MetricResult pixel_auc_of(const std::vector<const ScoredImage*>& items, PixelAucMode mode) {
    for (const auto* it : items)
        if (!it->gt_mask) return {std::nullopt, "missing ground truth for " + it->name};
    if (items.empty()) return {std::nullopt, "no images"};
    if (mode == PixelAucMode::pooled) {
        std::vector<float> s;
        std::vector<int> l;
        for (const auto* it : items) {
            require_same_shape(it->s_map, *it->gt_mask, "evaluate: " + it->name);
            s.insert(s.end(), it->s_map.data.begin(), it->s_map.data.end());
            for (float m : it->gt_mask->data) l.push_back(m > 0.5f ? 1 : 0);
        }
        return guarded_auc(s, l);
    }
    double acc = 0;
    int n = 0;
    for (const auto* it : items) {
        require_same_shape(it->s_map, *it->gt_mask, "evaluate: " + it->name);
        std::vector<int> l;
        for (float m : it->gt_mask->data) l.push_back(m > 0.5f ? 1 : 0);
        const auto r = guarded_auc(it->s_map.data, l);
        if (r.value) {
            acc += *r.value;
            ++n;
        }
    }
    if (n == 0) return {std::nullopt, "no image contains both classes"};
    return {acc / n, {}};
}

inline MetricResult image_auc_of(const std::vector<const ScoredImage*>& items) {
    std::vector<double> s;
    std::vector<int> l;
    for (const auto* it : items) {
        if (!it->gt_label) return {std::nullopt, "missing label for " + it->name};
        s.push_back(it->image_score);
        l.push_back(*it->gt_label);
    }
    if (s.empty()) return {std::nullopt, "no images"};
    return guarded_auc(normalize_scores(s), l);
}

}  // namespace detail

/// Pixel AUC over the raw score maps of all images (or the mean of per-image AUCs),
/// image AUC over normalized image scores. Categories pair each defect type with the
/// normal test images.
inline EvalReport evaluate(const std::vector<ScoredImage>& items, PixelAucMode mode = PixelAucMode::pooled) {
    EvalReport rep;
    rep.n_images = items.size();
    std::vector<const ScoredImage*> all, normals;
    std::map<std::string, std::vector<const ScoredImage*>> by_type;
    for (const auto& it : items) {
        all.push_back(&it);
        if (it.gt_label && *it.gt_label == 0)
            normals.push_back(&it);
        else
            by_type[it.category].push_back(&it);
    }
    rep.pixel_auc = detail::pixel_auc_of(all, mode);
    rep.image_auc = detail::image_auc_of(all);
    for (const auto& [type, group] : by_type) {
        auto members = normals;
        members.insert(members.end(), group.begin(), group.end());
        rep.category_pixel_auc[type] = detail::pixel_auc_of(members, mode);
        rep.category_image_auc[type] = detail::image_auc_of(members);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Raw score map container: "TSMP" | u32 H | u32 W | H*W x f32, little-endian.

inline std::vector<std::uint8_t> encode_score_map(const MaskMap& m) {
    detail::require(m.channels == 1, "encode_score_map: map must be single-channel");
    detail::ByteWriter w;
    w.bytes("TSMP", 4);
    w.u32(static_cast<std::uint32_t>(m.height));
    w.u32(static_cast<std::uint32_t>(m.width));
    for (float v : m.data) w.f32(v);
    return w.take();
}

inline MaskMap decode_score_map(const std::vector<std::uint8_t>& bytes, const std::string& what = "score map") {
    detail::ByteReader r(bytes, what);
    if (r.str(4) != "TSMP") r.fail("bad magic (not a TSMP score map)");
    const std::uint32_t h = r.u32(), w = r.u32();
    if (h == 0 || w == 0 || static_cast<std::uint64_t>(h) * w > (std::uint64_t{1} << 31)) r.fail("bad dimensions");
    MaskMap m(1, static_cast<int>(h), static_cast<int>(w));
    for (auto& v : m.data) v = r.f32();
    if (!r.done()) r.fail("trailing bytes");
    return m;
}

inline void save_score_map(const MaskMap& m, const std::filesystem::path& path) {
    detail::write_file_bytes(path, encode_score_map(m));
}

inline MaskMap load_score_map(const std::filesystem::path& path) {
    return decode_score_map(detail::read_file_bytes(path), path.string());
}

}  // namespace tsdn
