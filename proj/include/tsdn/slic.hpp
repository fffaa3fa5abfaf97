#pragma once

// SLIC superpixels: localized k-means in (L, a, b, x, y) from a regular grid,
// followed by a 4-connectivity clean-up pass.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "tsdn/error.hpp"
#include "tsdn/imgproc.hpp"
#include "tsdn/tensor.hpp"

namespace tsdn {

struct SlicParams {
    int n_segments = 400;
    double compactness = 10.0;
    int iterations = 10;
    /// The grid initialization is deterministic; the seed is carried so callers can
    /// key cached segmentations by the full parameter set.
    std::uint64_t seed = 0;
    /// Fragments smaller than this are merged away; 0 selects (H*W/n_segments)/4.
    int min_size = 0;

    void validate() const {
        detail::require(n_segments >= 1, "SlicParams: n_segments must be >= 1");
        detail::require(compactness > 0, "SlicParams: compactness must be > 0");
        detail::require(iterations >= 1, "SlicParams: iterations must be >= 1");
        detail::require(min_size >= 0, "SlicParams: min_size must be >= 0");
    }
};

struct SuperpixelCenter {
    double l = 0, a = 0, b = 0, x = 0, y = 0;
};

struct SuperpixelSegmentation {
    int height = 0;
    int width = 0;
    std::vector<int> labels;
    int num_segments = 0;
    std::vector<SuperpixelCenter> centers;

    int label(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }

    std::vector<std::size_t> histogram() const {
        std::vector<std::size_t> h(num_segments, 0);
        for (int l : labels) ++h[l];
        return h;
    }
};

namespace detail {

template <typename T>
void recompute_centers(SuperpixelSegmentation& seg, const Tensor<T>& lab) {
    std::vector<double> acc(static_cast<std::size_t>(seg.num_segments) * 6, 0.0);
    const std::size_t n = lab.plane_size();
    for (int y = 0; y < seg.height; ++y)
        for (int x = 0; x < seg.width; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * seg.width + x;
            double* a = &acc[seg.labels[i] * 6];
            a[0] += lab.data[i];
            a[1] += lab.data[n + i];
            a[2] += lab.data[2 * n + i];
            a[3] += x;
            a[4] += y;
            a[5] += 1;
        }
    seg.centers.assign(seg.num_segments, {});
    for (int k = 0; k < seg.num_segments; ++k) {
        const double* a = &acc[k * 6];
        if (a[5] > 0) seg.centers[k] = {a[0] / a[5], a[1] / a[5], a[2] / a[5], a[3] / a[5], a[4] / a[5]};
    }
}

}  // namespace detail

/// Makes every label 4-connected. Fragments with fewer than min_size pixels are merged
/// into the neighbouring region sharing the longest boundary; remaining disconnected
/// pieces become labels of their own. Labels are renumbered densely in scan order.
inline SuperpixelSegmentation enforce_connectivity(const SuperpixelSegmentation& seg, int min_size) {
    const int h = seg.height, w = seg.width;
    const std::size_t n = static_cast<std::size_t>(h) * w;
    detail::require(seg.labels.size() == n, "enforce_connectivity: label map size mismatch");

    // Connected components of equal labels.
    std::vector<int> comp(n, -1);
    std::vector<std::vector<std::size_t>> members;
    std::vector<std::size_t> stack;
    for (std::size_t start = 0; start < n; ++start) {
        if (comp[start] >= 0) continue;
        const int id = static_cast<int>(members.size());
        members.emplace_back();
        comp[start] = id;
        stack.assign(1, start);
        while (!stack.empty()) {
            const std::size_t p = stack.back();
            stack.pop_back();
            members[id].push_back(p);
            const int py = static_cast<int>(p / w), px = static_cast<int>(p % w);
            const std::size_t nb[4] = {px > 0 ? p - 1 : n, px + 1 < w ? p + 1 : n, py > 0 ? p - w : n,
                                       py + 1 < h ? p + w : n};
            for (std::size_t q : nb)
                if (q < n && comp[q] < 0 && seg.labels[q] == seg.labels[p]) {
                    comp[q] = id;
                    stack.push_back(q);
                }
        }
    }

    // Union-find over components; small ones fold into their best neighbour.
    const int nc = static_cast<int>(members.size());
    std::vector<int> parent(nc);
    std::iota(parent.begin(), parent.end(), 0);
    std::vector<std::size_t> size(nc);
    for (int c = 0; c < nc; ++c) size[c] = members[c].size();
    auto find = [&](int c) {
        while (parent[c] != c) c = parent[c] = parent[parent[c]];
        return c;
    };

    std::vector<std::size_t> shared(nc, 0);
    std::vector<int> touched;
    for (int c = 0; c < nc; ++c) {
        const int root = find(c);
        if (size[root] >= static_cast<std::size_t>(min_size)) continue;
        touched.clear();
        for (std::size_t p : members[root]) {
            const int py = static_cast<int>(p / w), px = static_cast<int>(p % w);
            const std::size_t nb[4] = {px > 0 ? p - 1 : n, px + 1 < w ? p + 1 : n, py > 0 ? p - w : n,
                                       py + 1 < h ? p + w : n};
            for (std::size_t q : nb) {
                if (q >= n) continue;
                const int r = find(comp[q]);
                if (r == root) continue;
                if (shared[r]++ == 0) touched.push_back(r);
            }
        }
        if (touched.empty()) continue;
        int best = touched.front();
        for (int r : touched)
            if (shared[r] > shared[best] || (shared[r] == shared[best] && r < best)) best = r;
        for (int r : touched) shared[r] = 0;
        parent[root] = best;
        size[best] += size[root];
        members[best].insert(members[best].end(), members[root].begin(), members[root].end());
        members[root].clear();
    }

    SuperpixelSegmentation out;
    out.height = h;
    out.width = w;
    out.labels.assign(n, -1);
    std::vector<int> dense(nc, -1);
    int next = 0;
    for (std::size_t p = 0; p < n; ++p) {
        const int r = find(comp[p]);
        if (dense[r] < 0) dense[r] = next++;
        out.labels[p] = dense[r];
    }
    out.num_segments = next;
    return out;
}

/// SLIC segmentation of a 3-channel (or 1-channel, replicated) image in [0,1].
template <typename T>
SuperpixelSegmentation slic_segment(const Tensor<T>& img, const SlicParams& params) {
    params.validate();
    detail::require(img.channels == 3 || img.channels == 1, "slic_segment: expected 1 or 3 channels");
    const int h = img.height, w = img.width;
    const std::size_t n = static_cast<std::size_t>(h) * w;
    detail::require(n >= static_cast<std::size_t>(params.n_segments),
                    "slic_segment: n_segments exceeds the pixel count");

    Tensor<T> rgb = img;
    if (img.channels == 1) {
        rgb = Tensor<T>(3, h, w);
        for (int c = 0; c < 3; ++c) std::copy(img.data.begin(), img.data.end(), rgb.plane(c).begin());
    }
    const Tensor<T> lab = rgb_to_lab(rgb);
    const T* L = lab.data.data();
    const T* A = L + n;
    const T* B = A + n;

    const double step = std::sqrt(static_cast<double>(n) / params.n_segments);
    const int nx = std::max(1, static_cast<int>(std::lround(w / step)));
    const int ny = std::max(1, static_cast<int>(std::lround(h / step)));

    auto grad = [&](int x, int y) {
        const int x0 = std::max(x - 1, 0), x1 = std::min(x + 1, w - 1);
        const int y0 = std::max(y - 1, 0), y1 = std::min(y + 1, h - 1);
        const std::size_t l = y * w + x0, r = y * w + x1, u = y0 * w + x, d = y1 * w + x;
        auto sq = [](double v) { return v * v; };
        return sq(L[r] - L[l]) + sq(A[r] - A[l]) + sq(B[r] - B[l]) + sq(L[d] - L[u]) + sq(A[d] - A[u]) +
               sq(B[d] - B[u]);
    };

    std::vector<SuperpixelCenter> centers;
    centers.reserve(static_cast<std::size_t>(nx) * ny);
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) {
            // Start at the centroid of the grid cell; integer positions would put pixels
            // exactly between two centers and hand every tie to the same side.
            const double gx = (i + 0.5) * w / nx - 0.5, gy = (j + 0.5) * h / ny - 0.5;
            const int cx = std::clamp(static_cast<int>(std::lround(gx)), 0, w - 1);
            const int cy = std::clamp(static_cast<int>(std::lround(gy)), 0, h - 1);
            // Move to the lowest-gradient pixel of the 3x3 neighbourhood (ties keep the grid position).
            double best = grad(cx, cy);
            int bx = cx, by = cy;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int x = cx + dx, y = cy + dy;
                    if (x < 0 || y < 0 || x >= w || y >= h) continue;
                    const double g = grad(x, y);
                    if (g < best) {
                        best = g;
                        bx = x;
                        by = y;
                    }
                }
            const bool moved = bx != cx || by != cy;
            const std::size_t p = static_cast<std::size_t>(by) * w + bx;
            centers.push_back({double(L[p]), double(A[p]), double(B[p]), moved ? double(bx) : gx, moved ? double(by) : gy});
        }

    const int k = static_cast<int>(centers.size());
    const double spatial = (params.compactness / step) * (params.compactness / step);
    const int reach = static_cast<int>(std::ceil(step));
    std::vector<int> labels(n, -1);
    std::vector<double> dist(n);

    for (int it = 0; it < params.iterations; ++it) {
        std::fill(labels.begin(), labels.end(), -1);
        std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
        for (int c = 0; c < k; ++c) {
            const auto& ct = centers[c];
            const int x0 = std::max(0, static_cast<int>(std::floor(ct.x)) - reach);
            const int x1 = std::min(w - 1, static_cast<int>(std::ceil(ct.x)) + reach);
            const int y0 = std::max(0, static_cast<int>(std::floor(ct.y)) - reach);
            const int y1 = std::min(h - 1, static_cast<int>(std::ceil(ct.y)) + reach);
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    const std::size_t p = static_cast<std::size_t>(y) * w + x;
                    const double dl = L[p] - ct.l, da = A[p] - ct.a, db = B[p] - ct.b;
                    const double dx = x - ct.x, dy = y - ct.y;
                    const double d = dl * dl + da * da + db * db + (dx * dx + dy * dy) * spatial;
                    if (d < dist[p]) {
                        dist[p] = d;
                        labels[p] = c;
                    }
                }
        }
        // Pixels no window reached fall back to the nearest center in space.
        for (std::size_t p = 0; p < n; ++p) {
            if (labels[p] >= 0) continue;
            const double x = static_cast<double>(p % w), y = static_cast<double>(p / w);
            double best = std::numeric_limits<double>::infinity();
            for (int c = 0; c < k; ++c) {
                const double d = (x - centers[c].x) * (x - centers[c].x) + (y - centers[c].y) * (y - centers[c].y);
                if (d < best) {
                    best = d;
                    labels[p] = c;
                }
            }
        }
        std::vector<double> acc(static_cast<std::size_t>(k) * 6, 0.0);
        for (std::size_t p = 0; p < n; ++p) {
            double* a = &acc[labels[p] * 6];
            a[0] += L[p];
            a[1] += A[p];
            a[2] += B[p];
            a[3] += static_cast<double>(p % w);
            a[4] += static_cast<double>(p / w);
            a[5] += 1;
        }
        for (int c = 0; c < k; ++c) {
            const double* a = &acc[c * 6];
            if (a[5] > 0) centers[c] = {a[0] / a[5], a[1] / a[5], a[2] / a[5], a[3] / a[5], a[4] / a[5]};
        }
    }

    SuperpixelSegmentation raw;
    raw.height = h;
    raw.width = w;
    raw.labels = std::move(labels);
    raw.num_segments = k;
    const int min_size = params.min_size > 0 ? params.min_size : static_cast<int>(n / params.n_segments / 4);
    SuperpixelSegmentation seg = enforce_connectivity(raw, min_size);
    detail::recompute_centers(seg, lab);
    return seg;
}

}  // namespace tsdn
