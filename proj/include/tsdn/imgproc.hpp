#pragma once

// Image and map primitives shared by the rest of the pipeline. Everything here
// is a pure function of its arguments.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "tsdn/error.hpp"
#include "tsdn/tensor.hpp"

namespace tsdn {

// ---------------------------------------------------------------------------
// Color

namespace detail {

inline double srgb_to_linear(double c) {
    return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

inline double lab_f(double t) {
    constexpr double delta = 6.0 / 29.0;
    return t > delta * delta * delta ? std::cbrt(t) : t / (3.0 * delta * delta) + 4.0 / 29.0;
}

}  // namespace detail

/// sRGB in [0,1] -> CIELAB (D65). L in [0,100].
template <typename T>
Tensor<T> rgb_to_lab(const Tensor<T>& img) {
    detail::require(img.channels == 3, "rgb_to_lab: expected 3 channels, got " + std::to_string(img.channels));
    constexpr double xn = 0.95047, yn = 1.0, zn = 1.08883;
    Tensor<T> out(3, img.height, img.width);
    const std::size_t n = img.plane_size();
    for (std::size_t i = 0; i < n; ++i) {
        const double r = detail::srgb_to_linear(static_cast<double>(img.data[i]));
        const double g = detail::srgb_to_linear(static_cast<double>(img.data[n + i]));
        const double b = detail::srgb_to_linear(static_cast<double>(img.data[2 * n + i]));
        const double x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
        const double y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
        const double z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
        const double fx = detail::lab_f(x / xn), fy = detail::lab_f(y / yn), fz = detail::lab_f(z / zn);
        out.data[i] = static_cast<T>(116.0 * fy - 16.0);
        out.data[n + i] = static_cast<T>(500.0 * (fx - fy));
        out.data[2 * n + i] = static_cast<T>(200.0 * (fy - fz));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Resampling

/// Bilinear resize with half-pixel centers (align_corners = false), edge clamped.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& img, int out_h, int out_w) {
    detail::require(out_h >= 1 && out_w >= 1, "resize_bilinear: target dimensions must be >= 1");
    detail::require(img.height >= 1 && img.width >= 1, "resize_bilinear: empty input");
    if (out_h == img.height && out_w == img.width) return img;

    struct Tap {
        int i0, i1;
        T w1;
    };
    auto taps = [](int in, int out) {
        std::vector<Tap> t(out);
        const double scale = static_cast<double>(in) / out;
        for (int o = 0; o < out; ++o) {
            double src = (o + 0.5) * scale - 0.5;
            src = std::clamp(src, 0.0, static_cast<double>(in - 1));
            const int i0 = static_cast<int>(std::floor(src));
            const int i1 = std::min(i0 + 1, in - 1);
            t[o] = {i0, i1, static_cast<T>(src - i0)};
        }
        return t;
    };
    const auto ty = taps(img.height, out_h);
    const auto tx = taps(img.width, out_w);

    Tensor<T> out(img.channels, out_h, out_w);
    for (int c = 0; c < img.channels; ++c) {
        for (int y = 0; y < out_h; ++y) {
            const auto& a = ty[y];
            for (int x = 0; x < out_w; ++x) {
                const auto& b = tx[x];
                const T top = img.at(c, a.i0, b.i0) * (1 - b.w1) + img.at(c, a.i0, b.i1) * b.w1;
                const T bot = img.at(c, a.i1, b.i0) * (1 - b.w1) + img.at(c, a.i1, b.i1) * b.w1;
                out.at(c, y, x) = top * (1 - a.w1) + bot * a.w1;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Gaussian filtering

/// Normalized 1-D Gaussian taps, length 2*radius+1.
template <typename T>
std::vector<T> gaussian_kernel_1d(double sigma, int radius) {
    std::vector<double> k(2 * radius + 1);
    double sum = 0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
        sum += k[i + radius];
    }
    std::vector<T> out(k.size());
    for (std::size_t i = 0; i < k.size(); ++i) out[i] = static_cast<T>(k[i] / sum);
    return out;
}

namespace detail {

// Mirror without repeating the edge sample (d c b | a b c d | c b a).
inline int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

}  // namespace detail

/// Separable Gaussian blur, radius ceil(3*sigma), reflect padding. sigma = 0 is the identity.
template <typename T>
Tensor<T> gaussian_blur(const Tensor<T>& img, double sigma) {
    detail::require(sigma >= 0 && std::isfinite(sigma), "gaussian_blur: sigma must be >= 0");
    if (sigma == 0 || img.empty()) return img;
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    const auto k = gaussian_kernel_1d<T>(sigma, radius);
    const int h = img.height, w = img.width;

    Tensor<T> tmp(img.channels, h, w), out(img.channels, h, w);
    for (int c = 0; c < img.channels; ++c) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                T acc = 0;
                for (int d = -radius; d <= radius; ++d)
                    acc += k[d + radius] * img.at(c, y, detail::reflect_index(x + d, w));
                tmp.at(c, y, x) = acc;
            }
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                T acc = 0;
                for (int d = -radius; d <= radius; ++d)
                    acc += k[d + radius] * tmp.at(c, detail::reflect_index(y + d, h), x);
                out.at(c, y, x) = acc;
            }
    }
    return out;
}

// ---------------------------------------------------------------------------
// SSIM

struct SsimParams {
    int window_size = 11;
    double window_sigma = 1.5;
    double c1 = 0.01 * 0.01;
    double c2 = 0.03 * 0.03;
    double dynamic_range = 1.0;

    static SsimParams for_range(double range) {
        SsimParams p;
        p.dynamic_range = range;
        p.c1 = (0.01 * range) * (0.01 * range);
        p.c2 = (0.03 * range) * (0.03 * range);
        return p;
    }

    void validate() const {
        detail::require(window_size >= 3 && window_size % 2 == 1, "SsimParams: window_size must be odd and >= 3");
        detail::require(window_sigma > 0, "SsimParams: window_sigma must be > 0");
        detail::require(c1 > 0 && c2 > 0, "SsimParams: c1 and c2 must be > 0");
    }
};

namespace detail {

// Separable 'valid' correlation of an h x w plane with a symmetric 1-D kernel.
template <typename T>
std::vector<T> filter_valid(const T* src, int h, int w, const std::vector<T>& k) {
    const int n = static_cast<int>(k.size());
    const int oh = h - n + 1, ow = w - n + 1;
    std::vector<T> rows(static_cast<std::size_t>(h) * ow, T(0));
    for (int y = 0; y < h; ++y) {
        T* dst = rows.data() + static_cast<std::size_t>(y) * ow;
        const T* s = src + static_cast<std::size_t>(y) * w;
        for (int i = 0; i < n; ++i)
            for (int x = 0; x < ow; ++x) dst[x] += k[i] * s[x + i];
    }
    std::vector<T> out(static_cast<std::size_t>(oh) * ow, T(0));
    for (int y = 0; y < oh; ++y) {
        T* dst = out.data() + static_cast<std::size_t>(y) * ow;
        for (int i = 0; i < n; ++i) {
            const T* s = rows.data() + static_cast<std::size_t>(y + i) * ow;
            for (int x = 0; x < ow; ++x) dst[x] += k[i] * s[x];
        }
    }
    return out;
}

// Adjoint of filter_valid: scatters an oh x ow map back onto the h x w plane.
template <typename T>
std::vector<T> filter_valid_adjoint(const std::vector<T>& m, int h, int w, const std::vector<T>& k) {
    const int n = static_cast<int>(k.size());
    const int oh = h - n + 1, ow = w - n + 1;
    std::vector<T> cols(static_cast<std::size_t>(h) * ow, T(0));
    for (int y = 0; y < oh; ++y)
        for (int i = 0; i < n; ++i) {
            T* dst = cols.data() + static_cast<std::size_t>(y + i) * ow;
            const T* s = m.data() + static_cast<std::size_t>(y) * ow;
            for (int x = 0; x < ow; ++x) dst[x] += k[i] * s[x];
        }
    std::vector<T> out(static_cast<std::size_t>(h) * w, T(0));
    for (int y = 0; y < h; ++y) {
        T* dst = out.data() + static_cast<std::size_t>(y) * w;
        const T* s = cols.data() + static_cast<std::size_t>(y) * ow;
        for (int i = 0; i < n; ++i)
            for (int x = 0; x < ow; ++x) dst[x + i] += k[i] * s[x];
    }
    return out;
}

template <typename T>
void check_ssim_inputs(const Tensor<T>& a, const Tensor<T>& b, const SsimParams& p) {
    p.validate();
    require(a.channels == 1 && b.channels == 1, "ssim: expected single-channel maps");
    require_same_shape(a, b, "ssim");
    require(a.height >= p.window_size && a.width >= p.window_size, "ssim: map smaller than the window");
}

// Local statistics over every valid window position.
template <typename T>
struct SsimStats {
    std::vector<T> mu_a, mu_b, e_aa, e_bb, e_ab;
};

template <typename T>
SsimStats<T> ssim_stats(const Tensor<T>& a, const Tensor<T>& b, const std::vector<T>& k) {
    const int h = a.height, w = a.width;
    std::vector<T> aa(a.size()), bb(a.size()), ab(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        aa[i] = a.data[i] * a.data[i];
        bb[i] = b.data[i] * b.data[i];
        ab[i] = a.data[i] * b.data[i];
    }
    return {filter_valid(a.data.data(), h, w, k), filter_valid(b.data.data(), h, w, k),
            filter_valid(aa.data(), h, w, k), filter_valid(bb.data(), h, w, k), filter_valid(ab.data(), h, w, k)};
}

}  // namespace detail

/// Mean local SSIM over all fully-contained Gaussian windows.
template <typename T>
T ssim_mean(const Tensor<T>& a, const Tensor<T>& b, const SsimParams& p = {}) {
    detail::check_ssim_inputs(a, b, p);
    const auto k = gaussian_kernel_1d<T>(p.window_sigma, p.window_size / 2);
    const auto s = detail::ssim_stats(a, b, k);
    const T c1 = static_cast<T>(p.c1), c2 = static_cast<T>(p.c2);
    double acc = 0;
    for (std::size_t j = 0; j < s.mu_a.size(); ++j) {
        const T ma = s.mu_a[j], mb = s.mu_b[j];
        const T va = s.e_aa[j] - ma * ma, vb = s.e_bb[j] - mb * mb, cab = s.e_ab[j] - ma * mb;
        acc += static_cast<double>(((2 * ma * mb + c1) * (2 * cab + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2)));
    }
    return static_cast<T>(acc / static_cast<double>(s.mu_a.size()));
}

/// SSIM of many maps against one fixed map; the fixed map's local statistics are
/// computed once. score(a) equals ssim_mean(a, ref).
template <typename T>
class SsimAgainst {
public:
    explicit SsimAgainst(const Tensor<T>& ref, const SsimParams& p = {})
        : ref_(ref), p_(p), k_(gaussian_kernel_1d<T>(p.window_sigma, p.window_size / 2)) {
        detail::check_ssim_inputs(ref, ref, p);
        std::vector<T> bb(ref.size());
        for (std::size_t i = 0; i < ref.size(); ++i) bb[i] = ref.data[i] * ref.data[i];
        mu_b_ = detail::filter_valid(ref.data.data(), ref.height, ref.width, k_);
        e_bb_ = detail::filter_valid(bb.data(), ref.height, ref.width, k_);
    }

    T score(const Tensor<T>& a) const {
        detail::check_ssim_inputs(a, ref_, p_);
        const int h = a.height, w = a.width;
        std::vector<T> aa(a.size()), ab(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            aa[i] = a.data[i] * a.data[i];
            ab[i] = a.data[i] * ref_.data[i];
        }
        const auto mu_a = detail::filter_valid(a.data.data(), h, w, k_);
        const auto e_aa = detail::filter_valid(aa.data(), h, w, k_);
        const auto e_ab = detail::filter_valid(ab.data(), h, w, k_);
        const T c1 = static_cast<T>(p_.c1), c2 = static_cast<T>(p_.c2);
        double acc = 0;
        for (std::size_t j = 0; j < mu_a.size(); ++j) {
            const T ma = mu_a[j], mb = mu_b_[j];
            const T va = e_aa[j] - ma * ma, vb = e_bb_[j] - mb * mb, cab = e_ab[j] - ma * mb;
            acc += static_cast<double>(((2 * ma * mb + c1) * (2 * cab + c2)) /
                                       ((ma * ma + mb * mb + c1) * (va + vb + c2)));
        }
        return static_cast<T>(acc / static_cast<double>(mu_a.size()));
    }

private:
    Tensor<T> ref_;
    SsimParams p_;
    std::vector<T> k_;
    std::vector<T> mu_b_, e_bb_;
};

/// ssim_mean plus its gradient with respect to `b`, written into grad_b.
template <typename T>
T ssim_mean_grad(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& grad_b, const SsimParams& p = {}) {
    detail::check_ssim_inputs(a, b, p);
    const auto k = gaussian_kernel_1d<T>(p.window_sigma, p.window_size / 2);
    const auto s = detail::ssim_stats(a, b, k);
    const T c1 = static_cast<T>(p.c1), c2 = static_cast<T>(p.c2);
    const std::size_t nw = s.mu_a.size();
    const T inv_n = T(1) / static_cast<T>(nw);

    std::vector<T> d_mu(nw), d_ebb(nw), d_eab(nw);
    double acc = 0;
    for (std::size_t j = 0; j < nw; ++j) {
        const T ma = s.mu_a[j], mb = s.mu_b[j];
        const T va = s.e_aa[j] - ma * ma, vb = s.e_bb[j] - mb * mb, cab = s.e_ab[j] - ma * mb;
        const T a1 = 2 * ma * mb + c1, a2 = 2 * cab + c2;
        const T b1 = ma * ma + mb * mb + c1, b2 = va + vb + c2;
        const T ssim = (a1 * a2) / (b1 * b2);
        acc += static_cast<double>(ssim);
        const T ds_dmu = (2 * ma * a2) / (b1 * b2) - ssim * 2 * mb / b1;
        const T ds_dvb = -ssim / b2;
        const T ds_dcab = 2 * a1 / (b1 * b2);
        // Chain through var_b = E[b^2] - mu_b^2 and cov = E[ab] - mu_a mu_b.
        d_ebb[j] = ds_dvb * inv_n;
        d_eab[j] = ds_dcab * inv_n;
        d_mu[j] = (ds_dmu - 2 * mb * ds_dvb - ma * ds_dcab) * inv_n;
    }
    const int h = a.height, w = a.width;
    const auto g_mu = detail::filter_valid_adjoint(d_mu, h, w, k);
    const auto g_bb = detail::filter_valid_adjoint(d_ebb, h, w, k);
    const auto g_ab = detail::filter_valid_adjoint(d_eab, h, w, k);
    grad_b = Tensor<T>(1, h, w);
    for (std::size_t i = 0; i < grad_b.size(); ++i)
        grad_b.data[i] = g_mu[i] + 2 * b.data[i] * g_bb[i] + a.data[i] * g_ab[i];
    return static_cast<T>(acc / static_cast<double>(nw));
}

// ---------------------------------------------------------------------------
// Gradient magnitude similarity

/// Stabilizer for [0,1]-ranged inputs with 1/3-scaled Prewitt gradients.
inline constexpr double kGmsConstant = 0.0026;

namespace detail {

// Prewitt responses (scaled by 1/3) at interior pixels; output is (h-2) x (w-2).
template <typename T>
void prewitt(const Tensor<T>& m, std::vector<T>& gx, std::vector<T>& gy) {
    const int h = m.height, w = m.width, oh = h - 2, ow = w - 2;
    gx.assign(static_cast<std::size_t>(oh) * ow, T(0));
    gy.assign(gx.size(), T(0));
    const T third = T(1) / T(3);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            T sx = 0, sy = 0;
            for (int d = 0; d < 3; ++d) {
                sx += m.at(0, y + d, x) - m.at(0, y + d, x + 2);
                sy += m.at(0, y, x + d) - m.at(0, y + 2, x + d);
            }
            gx[y * ow + x] = sx * third;
            gy[y * ow + x] = sy * third;
        }
}

template <typename T>
void check_gms_inputs(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.channels == 1 && b.channels == 1, "gms: expected single-channel maps");
    require_same_shape(a, b, "gms");
    require(a.height >= 3 && a.width >= 3, "gms: maps must be at least 3x3");
}

}  // namespace detail

/// Mean per-pixel gradient magnitude similarity over interior pixels; 1 for identical maps.
template <typename T>
T gms_mean(const Tensor<T>& a, const Tensor<T>& b, double c = kGmsConstant) {
    detail::check_gms_inputs(a, b);
    std::vector<T> ax, ay, bx, by;
    detail::prewitt(a, ax, ay);
    detail::prewitt(b, bx, by);
    const T cc = static_cast<T>(c);
    double acc = 0;
    for (std::size_t i = 0; i < ax.size(); ++i) {
        const T ga = std::sqrt(ax[i] * ax[i] + ay[i] * ay[i]);
        const T gb = std::sqrt(bx[i] * bx[i] + by[i] * by[i]);
        acc += static_cast<double>((2 * ga * gb + cc) / (ga * ga + gb * gb + cc));
    }
    return static_cast<T>(acc / static_cast<double>(ax.size()));
}

/// gms_mean plus its gradient with respect to `b`.
template <typename T>
T gms_mean_grad(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& grad_b, double c = kGmsConstant) {
    detail::check_gms_inputs(a, b);
    std::vector<T> ax, ay, bx, by;
    detail::prewitt(a, ax, ay);
    detail::prewitt(b, bx, by);
    const T cc = static_cast<T>(c);
    const int h = a.height, w = a.width, ow = w - 2;
    const T inv_n = T(1) / static_cast<T>(ax.size());
    std::vector<T> dgx(ax.size()), dgy(ax.size());
    double acc = 0;
    for (std::size_t i = 0; i < ax.size(); ++i) {
        const T ga = std::sqrt(ax[i] * ax[i] + ay[i] * ay[i]);
        const T gb = std::sqrt(bx[i] * bx[i] + by[i] * by[i]);
        const T num = 2 * ga * gb + cc, den = ga * ga + gb * gb + cc;
        acc += static_cast<double>(num / den);
        const T ds_dgb = (2 * ga * den - num * 2 * gb) / (den * den) * inv_n;
        // gb is not differentiable at 0; take the zero subgradient there.
        dgx[i] = gb > 0 ? ds_dgb * bx[i] / gb : T(0);
        dgy[i] = gb > 0 ? ds_dgb * by[i] / gb : T(0);
    }
    grad_b = Tensor<T>(1, h, w);
    const T third = T(1) / T(3);
    for (int y = 0; y < h - 2; ++y)
        for (int x = 0; x < ow; ++x) {
            const T gx = dgx[y * ow + x] * third, gy = dgy[y * ow + x] * third;
            for (int d = 0; d < 3; ++d) {
                grad_b.at(0, y + d, x) += gx;
                grad_b.at(0, y + d, x + 2) -= gx;
                grad_b.at(0, y, x + d) += gy;
                grad_b.at(0, y + 2, x + d) -= gy;
            }
        }
    return static_cast<T>(acc / static_cast<double>(ax.size()));
}

// ---------------------------------------------------------------------------
// Normalization

/// (x - min) / (max - min) over all elements; a constant input maps to all zeros.
template <typename T>
Tensor<T> minmax_normalize(const Tensor<T>& m) {
    Tensor<T> out(m.channels, m.height, m.width);
    if (m.empty()) return out;
    const auto [lo, hi] = std::minmax_element(m.data.begin(), m.data.end());
    const T mn = *lo, range = *hi - *lo;
    if (!(range > 0)) return out;
    for (std::size_t i = 0; i < m.size(); ++i) out.data[i] = std::clamp((m.data[i] - mn) / range, T(0), T(1));
    return out;
}

template <typename T>
std::vector<T> minmax_normalize(const std::vector<T>& v) {
    std::vector<T> out(v.size(), T(0));
    if (v.empty()) return out;
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    const T mn = *lo, range = *hi - *lo;
    if (!(range > 0)) return out;
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::clamp((v[i] - mn) / range, T(0), T(1));
    return out;
}

}  // namespace tsdn
