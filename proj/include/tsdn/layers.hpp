#pragma once

// Differentiable building blocks. Each layer is a thin descriptor holding
// parameter indices into a ParamSet; forward passes never mutate parameters,
// backward passes accumulate into a GradSet aligned with the ParamSet.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "tsdn/error.hpp"
#include "tsdn/tensor.hpp"

namespace tsdn {

template <typename T>
struct Parameter {
    std::string name;
    std::vector<int> shape;
    std::vector<T> value;

    std::size_t numel() const { return value.size(); }
};

template <typename T>
class ParamSet {
public:
    std::size_t add(std::string name, std::vector<int> shape, T fill = T(0)) {
        std::size_t n = 1;
        for (int d : shape) n *= static_cast<std::size_t>(d);
        items_.push_back({std::move(name), std::move(shape), std::vector<T>(n, fill)});
        return items_.size() - 1;
    }

    std::size_t size() const noexcept { return items_.size(); }
    Parameter<T>& operator[](std::size_t i) { return items_[i]; }
    const Parameter<T>& operator[](std::size_t i) const { return items_[i]; }
    std::vector<Parameter<T>>& items() noexcept { return items_; }
    const std::vector<Parameter<T>>& items() const noexcept { return items_; }

    const T* data(std::size_t i) const { return items_[i].value.data(); }

    std::size_t index_of(const std::string& name) const {
        for (std::size_t i = 0; i < items_.size(); ++i)
            if (items_[i].name == name) return i;
        throw InvalidInput("no parameter named '" + name + "'");
    }
    Parameter<T>& operator[](const std::string& name) { return items_[index_of(name)]; }
    const Parameter<T>& operator[](const std::string& name) const { return items_[index_of(name)]; }

    std::size_t total_numel() const {
        std::size_t n = 0;
        for (const auto& p : items_) n += p.numel();
        return n;
    }

    template <typename U>
    ParamSet<U> cast() const {
        ParamSet<U> out;
        for (const auto& p : items_) {
            const std::size_t i = out.add(p.name, p.shape);
            for (std::size_t j = 0; j < p.value.size(); ++j) out[i].value[j] = static_cast<U>(p.value[j]);
        }
        return out;
    }

    friend bool operator==(const ParamSet& a, const ParamSet& b) {
        if (a.items_.size() != b.items_.size()) return false;
        for (std::size_t i = 0; i < a.items_.size(); ++i) {
            const auto& x = a.items_[i];
            const auto& y = b.items_[i];
            if (x.name != y.name || x.shape != y.shape || x.value != y.value) return false;
        }
        return true;
    }

private:
    std::vector<Parameter<T>> items_;
};

/// Gradient buffers, one per parameter, same order as the ParamSet.
template <typename T>
using GradSet = std::vector<std::vector<T>>;

template <typename T>
GradSet<T> zero_grads(const ParamSet<T>& params) {
    GradSet<T> g(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) g[i].assign(params[i].numel(), T(0));
    return g;
}

namespace detail {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

inline int conv_out(int in, int k, int s, int p) { return (in + 2 * p - k) / s + 1; }

// Unfolds a (c, h, w) image into a (c*k*k) x (oh*ow) patch matrix.
template <typename T>
void im2col(const T* x, int c, int h, int w, int k, int s, int p, int oh, int ow, std::vector<T>& cols) {
    cols.assign(static_cast<std::size_t>(c) * k * k * oh * ow, T(0));
    T* dst = cols.data();
    for (int ch = 0; ch < c; ++ch)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * s - p + ky;
                    T* row = dst + oy * ow;
                    if (iy < 0 || iy >= h) continue;
                    const T* src = x + (static_cast<std::size_t>(ch) * h + iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * s - p + kx;
                        if (ix >= 0 && ix < w) row[ox] = src[ix];
                    }
                }
                dst += static_cast<std::size_t>(oh) * ow;
            }
}

// Adjoint of im2col: accumulates patch columns back into a (c, h, w) image.
template <typename T>
void col2im(const T* cols, int c, int h, int w, int k, int s, int p, int oh, int ow, T* x) {
    const T* src = cols;
    for (int ch = 0; ch < c; ++ch)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * s - p + ky;
                    if (iy < 0 || iy >= h) continue;
                    const T* row = src + oy * ow;
                    T* dst = x + (static_cast<std::size_t>(ch) * h + iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * s - p + kx;
                        if (ix >= 0 && ix < w) dst[ix] += row[ox];
                    }
                }
                src += static_cast<std::size_t>(oh) * ow;
            }
}

template <typename T>
void fill_uniform(std::vector<T>& v, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-bound, bound);
    for (auto& x : v) x = static_cast<T>(u(rng));
}

}  // namespace detail

/// 2-D convolution, weights (cout, cin, k, k).
template <typename T>
struct Conv2d {
    int cin = 0, cout = 0, k = 1, stride = 1, pad = 0;
    std::size_t w = 0, b = 0;

    static Conv2d make(ParamSet<T>& ps, const std::string& name, int cin, int cout, int k, int stride, int pad) {
        Conv2d c{cin, cout, k, stride, pad};
        c.w = ps.add(name + ".weight", {cout, cin, k, k});
        c.b = ps.add(name + ".bias", {cout});
        return c;
    }

    void init(ParamSet<T>& ps, std::mt19937_64& rng, double gain = std::sqrt(6.0)) const {
        const double fan_in = static_cast<double>(cin) * k * k;
        detail::fill_uniform(ps[w].value, gain / std::sqrt(fan_in), rng);
        detail::fill_uniform(ps[b].value, 1.0 / std::sqrt(fan_in), rng);
    }

    Tensor<T> forward(const ParamSet<T>& ps, const Tensor<T>& x, std::vector<T>& cols) const {
        detail::require(x.channels == cin, "Conv2d: expected " + std::to_string(cin) + " input channels, got " +
                                               std::to_string(x.channels));
        const int oh = detail::conv_out(x.height, k, stride, pad), ow = detail::conv_out(x.width, k, stride, pad);
        Tensor<T> y(cout, oh, ow);
        const int hw = oh * ow, kk = cin * k * k;
        const T* src = x.data.data();
        if (k != 1 || stride != 1 || pad != 0) {
            detail::im2col(x.data.data(), cin, x.height, x.width, k, stride, pad, oh, ow, cols);
            src = cols.data();
        } else {
            cols.clear();
        }
        detail::MapR<T> out(y.data.data(), cout, hw);
        out.noalias() = detail::CMapR<T>(ps.data(w), cout, kk) * detail::CMapR<T>(src, kk, hw);
        for (int o = 0; o < cout; ++o) out.row(o).array() += ps.data(b)[o];
        return y;
    }

    /// Accumulates weight/bias gradients; returns dL/dx.
    Tensor<T> backward(const ParamSet<T>& ps, GradSet<T>& gs, const Tensor<T>& x, const std::vector<T>& cols,
                       const Tensor<T>& dy) const {
        const int hw = dy.height * dy.width, kk = cin * k * k;
        const T* src = cols.empty() ? x.data.data() : cols.data();
        detail::CMapR<T> g(dy.data.data(), cout, hw);
        detail::MapR<T>(gs[w].data(), cout, kk).noalias() += g * detail::CMapR<T>(src, kk, hw).transpose();
        // plain loops for reductions: Eigen's vectorized sums split work by buffer address
        for (int o = 0; o < cout; ++o) {
            const T* row = dy.data.data() + static_cast<std::size_t>(o) * hw;
            T acc = 0;
            for (int i = 0; i < hw; ++i) acc += row[i];
            gs[b][o] += acc;
        }
        Tensor<T> dx(cin, x.height, x.width);
        if (cols.empty()) {
            detail::MapR<T>(dx.data.data(), cin, hw).noalias() = detail::CMapR<T>(ps.data(w), cout, kk).transpose() * g;
        } else {
            std::vector<T> dcols(static_cast<std::size_t>(kk) * hw);
            detail::MapR<T>(dcols.data(), kk, hw).noalias() = detail::CMapR<T>(ps.data(w), cout, kk).transpose() * g;
            detail::col2im(dcols.data(), cin, x.height, x.width, k, stride, pad, dy.height, dy.width, dx.data.data());
        }
        return dx;
    }
};

/// Transposed convolution (fractionally strided), weights (cin, cout, k, k).
template <typename T>
struct ConvTranspose2d {
    int cin = 0, cout = 0, k = 4, stride = 2, pad = 1;
    std::size_t w = 0, b = 0;

    static ConvTranspose2d make(ParamSet<T>& ps, const std::string& name, int cin, int cout, int k, int stride,
                                int pad) {
        ConvTranspose2d c{cin, cout, k, stride, pad};
        c.w = ps.add(name + ".weight", {cin, cout, k, k});
        c.b = ps.add(name + ".bias", {cout});
        return c;
    }

    void init(ParamSet<T>& ps, std::mt19937_64& rng) const {
        // Each output pixel sees cin * (k/stride)^2 taps.
        const double fan_in = static_cast<double>(cin) * (k / stride) * (k / stride);
        detail::fill_uniform(ps[w].value, std::sqrt(6.0 / fan_in), rng);
        detail::fill_uniform(ps[b].value, 1.0 / std::sqrt(fan_in), rng);
    }

    int out_size(int in) const { return (in - 1) * stride - 2 * pad + k; }

    Tensor<T> forward(const ParamSet<T>& ps, const Tensor<T>& x) const {
        detail::require(x.channels == cin, "ConvTranspose2d: expected " + std::to_string(cin) + " input channels");
        const int oh = out_size(x.height), ow = out_size(x.width);
        const int hw = x.height * x.width, kk = cout * k * k;
        std::vector<T> cols(static_cast<std::size_t>(kk) * hw);
        detail::MapR<T>(cols.data(), kk, hw).noalias() =
            detail::CMapR<T>(ps.data(w), cin, kk).transpose() * detail::CMapR<T>(x.data.data(), cin, hw);
        Tensor<T> y(cout, oh, ow);
        detail::col2im(cols.data(), cout, oh, ow, k, stride, pad, x.height, x.width, y.data.data());
        for (int o = 0; o < cout; ++o)
            for (auto& v : y.plane(o)) v += ps.data(b)[o];
        return y;
    }

    Tensor<T> backward(const ParamSet<T>& ps, GradSet<T>& gs, const Tensor<T>& x, const Tensor<T>& dy) const {
        const int hw = x.height * x.width, kk = cout * k * k;
        std::vector<T> dcols;
        detail::im2col(dy.data.data(), cout, dy.height, dy.width, k, stride, pad, x.height, x.width, dcols);
        detail::CMapR<T> dc(dcols.data(), kk, hw);
        detail::MapR<T>(gs[w].data(), cin, kk).noalias() +=
            detail::CMapR<T>(x.data.data(), cin, hw) * dc.transpose();
        for (int o = 0; o < cout; ++o) {
            T s = 0;
            for (T v : dy.plane(o)) s += v;
            gs[b][o] += s;
        }
        Tensor<T> dx(cin, x.height, x.width);
        detail::MapR<T>(dx.data.data(), cin, hw).noalias() = detail::CMapR<T>(ps.data(w), cin, kk) * dc;
        return dx;
    }
};

/// Group normalization with per-channel affine parameters.
template <typename T>
struct GroupNorm {
    int channels = 0, groups = 1;
    std::size_t gamma = 0, beta = 0;
    static constexpr double eps = 1e-5;

    struct Cache {
        Tensor<T> xhat;
        std::vector<T> inv_std;
    };

    static GroupNorm make(ParamSet<T>& ps, const std::string& name, int channels, int max_groups = 4) {
        GroupNorm g;
        g.channels = channels;
        g.groups = 1;
        for (int cand = std::min(max_groups, channels); cand >= 1; --cand)
            if (channels % cand == 0) {
                g.groups = cand;
                break;
            }
        g.gamma = ps.add(name + ".gamma", {channels}, T(1));
        g.beta = ps.add(name + ".beta", {channels}, T(0));
        return g;
    }

    Tensor<T> forward(const ParamSet<T>& ps, const Tensor<T>& x, Cache& cache) const {
        detail::require(x.channels == channels, "GroupNorm: channel mismatch");
        const int per = channels / groups;
        const std::size_t plane = x.plane_size(), n = plane * per;
        cache.xhat = Tensor<T>(x.channels, x.height, x.width);
        cache.inv_std.assign(groups, T(0));
        Tensor<T> y(x.channels, x.height, x.width);
        for (int g = 0; g < groups; ++g) {
            const T* src = x.data.data() + g * n;
            T mean = 0;
            for (std::size_t i = 0; i < n; ++i) mean += src[i];
            mean /= static_cast<T>(n);
            T var = 0;
            for (std::size_t i = 0; i < n; ++i) var += (src[i] - mean) * (src[i] - mean);
            var /= static_cast<T>(n);
            const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
            cache.inv_std[g] = inv;
            T* xh = cache.xhat.data.data() + g * n;
            for (std::size_t i = 0; i < n; ++i) xh[i] = (src[i] - mean) * inv;
        }
        for (int c = 0; c < channels; ++c) {
            const T ga = ps.data(gamma)[c], be = ps.data(beta)[c];
            const T* xh = cache.xhat.data.data() + c * plane;
            T* dst = y.data.data() + c * plane;
            for (std::size_t i = 0; i < plane; ++i) dst[i] = ga * xh[i] + be;
        }
        return y;
    }

    Tensor<T> backward(const ParamSet<T>& ps, GradSet<T>& gs, const Cache& cache, const Tensor<T>& dy) const {
        const int per = channels / groups;
        const std::size_t plane = dy.plane_size(), n = plane * per;
        Tensor<T> dxhat(dy.channels, dy.height, dy.width);
        for (int c = 0; c < channels; ++c) {
            const T* g = dy.data.data() + c * plane;
            const T* xh = cache.xhat.data.data() + c * plane;
            T sg = 0, sb = 0;
            for (std::size_t i = 0; i < plane; ++i) {
                sg += g[i] * xh[i];
                sb += g[i];
            }
            gs[gamma][c] += sg;
            gs[beta][c] += sb;
            const T ga = ps.data(gamma)[c];
            T* d = dxhat.data.data() + c * plane;
            for (std::size_t i = 0; i < plane; ++i) d[i] = g[i] * ga;
        }
        Tensor<T> dx(dy.channels, dy.height, dy.width);
        for (int g = 0; g < groups; ++g) {
            const T* d = dxhat.data.data() + g * n;
            const T* xh = cache.xhat.data.data() + g * n;
            T m1 = 0, m2 = 0;
            for (std::size_t i = 0; i < n; ++i) {
                m1 += d[i];
                m2 += d[i] * xh[i];
            }
            m1 /= static_cast<T>(n);
            m2 /= static_cast<T>(n);
            T* out = dx.data.data() + g * n;
            for (std::size_t i = 0; i < n; ++i) out[i] = cache.inv_std[g] * (d[i] - m1 - xh[i] * m2);
        }
        return dx;
    }
};

/// Fully connected layer, weights (out, in).
template <typename T>
struct Linear {
    int in = 0, out = 0;
    std::size_t w = 0, b = 0;

    static Linear make(ParamSet<T>& ps, const std::string& name, int in, int out) {
        Linear l{in, out};
        l.w = ps.add(name + ".weight", {out, in});
        l.b = ps.add(name + ".bias", {out});
        return l;
    }

    void init(ParamSet<T>& ps, std::mt19937_64& rng, double gain = std::sqrt(6.0)) const {
        detail::fill_uniform(ps[w].value, gain / std::sqrt(static_cast<double>(in)), rng);
        detail::fill_uniform(ps[b].value, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    }

    std::vector<T> forward(const ParamSet<T>& ps, const std::vector<T>& x) const {
        detail::require(static_cast<int>(x.size()) == in, "Linear: input length mismatch");
        std::vector<T> y(out);
        const T* wt = ps.data(w);
        for (int o = 0; o < out; ++o) {
            T acc = 0;
            for (int i = 0; i < in; ++i) acc += wt[static_cast<std::size_t>(o) * in + i] * x[i];
            y[o] = acc + ps.data(b)[o];
        }
        return y;
    }

    std::vector<T> backward(const ParamSet<T>& ps, GradSet<T>& gs, const std::vector<T>& x,
                            const std::vector<T>& dy) const {
        for (int o = 0; o < out; ++o) {
            gs[b][o] += dy[o];
            T* row = gs[w].data() + static_cast<std::size_t>(o) * in;
            for (int i = 0; i < in; ++i) row[i] += dy[o] * x[i];
        }
        std::vector<T> dx(in, T(0));
        const T* wt = ps.data(w);
        for (int o = 0; o < out; ++o)
            for (int i = 0; i < in; ++i) dx[i] += wt[static_cast<std::size_t>(o) * in + i] * dy[o];
        return dx;
    }
};

// ---------------------------------------------------------------------------
// Pointwise nonlinearities

template <typename T>
inline T sigmoid(T x) {
    return x >= 0 ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

namespace detail {

// Applies f to fixed-size aligned blocks. Eigen's mapped-array path peels unaligned
// head/tail elements into scalar std::exp, which rounds differently from the packet
// exp; going through aligned blocks keeps every element on one code path, so
// results do not depend on where a buffer happens to be allocated.
inline constexpr int kBlock = 16;

template <typename T, typename F>
void blockwise(std::size_t n, F&& f) {
    for (std::size_t i = 0; i < n; i += kBlock) f(i, std::min<std::size_t>(kBlock, n - i));
}

template <typename T>
using Block = Eigen::Array<T, kBlock, 1>;

}  // namespace detail

// For very negative x, exp(-x) overflows to inf and the expressions below still
// evaluate to the correct limits (0 or -0).

template <typename T>
void silu_inplace(std::vector<T>& v) {
    detail::blockwise<T>(v.size(), [&](std::size_t i, std::size_t m) {
        detail::Block<T> x = detail::Block<T>::Zero();
        std::copy_n(v.data() + i, m, x.data());
        const detail::Block<T> y = x / (T(1) + (-x).exp());
        std::copy_n(y.data(), m, v.data() + i);
    });
}

/// dL/dx for y = x * sigmoid(x), given the pre-activation x.
template <typename T>
void silu_backward_inplace(const std::vector<T>& x, std::vector<T>& g) {
    detail::blockwise<T>(g.size(), [&](std::size_t i, std::size_t m) {
        detail::Block<T> xa = detail::Block<T>::Zero(), ga = detail::Block<T>::Zero();
        std::copy_n(x.data() + i, m, xa.data());
        std::copy_n(g.data() + i, m, ga.data());
        const detail::Block<T> s = T(1) / (T(1) + (-xa).exp());
        ga *= s * (T(1) + xa * (T(1) - s));
        std::copy_n(ga.data(), m, g.data() + i);
    });
}

template <typename T>
void relu_inplace(std::vector<T>& v) {
    for (auto& x : v) x = x > 0 ? x : T(0);
}

template <typename T>
void relu_backward_inplace(const std::vector<T>& x, std::vector<T>& g) {
    for (std::size_t i = 0; i < g.size(); ++i)
        if (!(x[i] > 0)) g[i] = 0;
}

template <typename T>
void sigmoid_inplace(std::vector<T>& v) {
    detail::blockwise<T>(v.size(), [&](std::size_t i, std::size_t m) {
        detail::Block<T> x = detail::Block<T>::Zero();
        std::copy_n(v.data() + i, m, x.data());
        const detail::Block<T> y = T(1) / (T(1) + (-x).exp());
        std::copy_n(y.data(), m, v.data() + i);
    });
}

/// dL/dx for y = sigmoid(x), given the output y.
template <typename T>
void sigmoid_backward_inplace(const std::vector<T>& y, std::vector<T>& g) {
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= y[i] * (T(1) - y[i]);
}

/// Channel concatenation [a; b].
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require(a.height == b.height && a.width == b.width, "concat_channels: spatial size mismatch");
    Tensor<T> out(a.channels + b.channels, a.height, a.width);
    std::copy(a.data.begin(), a.data.end(), out.data.begin());
    std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.size());
    return out;
}

}  // namespace tsdn
