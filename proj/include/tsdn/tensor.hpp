#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tsdn/error.hpp"

namespace tsdn {

/// Dense channel-major C x H x W array.
template <typename T>
struct Tensor {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<T> data;

    Tensor() = default;
    Tensor(int c, int h, int w, T fill = T(0))
        : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {
        detail::require(c >= 0 && h >= 0 && w >= 0, "tensor dimensions must be non-negative");
    }

    std::size_t size() const noexcept { return data.size(); }
    bool empty() const noexcept { return data.empty(); }
    std::size_t plane_size() const noexcept { return static_cast<std::size_t>(height) * width; }

    T& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    const T& at(int c, int y, int x) const {
        return data[(static_cast<std::size_t>(c) * height + y) * width + x];
    }

    std::span<T> plane(int c) { return {data.data() + c * plane_size(), plane_size()}; }
    std::span<const T> plane(int c) const { return {data.data() + c * plane_size(), plane_size()}; }

    bool same_shape(const Tensor& o) const noexcept {
        return channels == o.channels && height == o.height && width == o.width;
    }

    /// Copy of channel c as a single-channel tensor.
    Tensor channel(int c) const {
        Tensor out(1, height, width);
        std::copy(plane(c).begin(), plane(c).end(), out.data.begin());
        return out;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(channels, height, width);
        std::transform(data.begin(), data.end(), out.data.begin(), [](T v) { return static_cast<U>(v); });
        return out;
    }

    bool all_finite() const {
        return std::all_of(data.begin(), data.end(), [](T v) { return std::isfinite(static_cast<double>(v)); });
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// I, I_surf and R_surf live here: 3 (or 1) channels, values in [0,1].
using ImageTensor = Tensor<float>;
/// Single-channel map: M_surf (binary), M'_surf, S_map, S_final.
using MaskMap = Tensor<float>;

template <typename T>
inline std::string shape_str(const Tensor<T>& t) {
    return "(" + std::to_string(t.channels) + "," + std::to_string(t.height) + "," + std::to_string(t.width) + ")";
}

template <typename T>
inline void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const std::string& what) {
    detail::require(a.same_shape(b), what + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

}  // namespace tsdn
