#pragma once

// PNG codecs, benchmark directory scanning and the synthetic texture dataset.
//
// Layout (same for scanned and generated data):
//   <root>/<category>/train/good/*.png
//   <root>/<category>/test/<type>/*.png
//   <root>/<category>/ground_truth/<type>/<stem>_mask.png

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "tsdn/error.hpp"
#include "tsdn/surf.hpp"
#include "tsdn/tensor.hpp"

namespace tsdn {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// PNG

namespace detail {

struct PngPixels {
    int width = 0, height = 0, channels = 0, bit_depth = 8;
    std::vector<std::uint16_t> samples;  // row-major interleaved, 0..(2^bit_depth - 1)
};

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline void png_error_fn(png_structp png, png_const_charp msg) {
    auto* err = static_cast<std::string*>(png_get_error_ptr(png));
    if (err) *err = msg;
    png_longjmp(png, 1);
}
inline void png_warning_fn(png_structp, png_const_charp) {}

// Normalizes to 8 or 16 bit gray / RGB, dropping alpha and expanding palettes.
inline PngPixels read_png(const fs::path& path) {
    FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw CodecError("cannot open " + path.string());
    std::uint8_t sig[8] = {};
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
        throw CodecError(path.string() + ": not a PNG file");

    std::string err;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
    if (!png) throw CodecError(path.string() + ": libpng initialization failed");
    png_infop info = png_create_info_struct(png);
    PngPixels out;
    std::vector<png_bytep> rows;
    std::vector<std::uint8_t> raw;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw CodecError(path.string() + ": " + (err.empty() ? "decode error" : err));
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
    if (depth == 16) png_set_swap(png);  // native little-endian samples
    png_read_update_info(png, info);

    out.width = static_cast<int>(png_get_image_width(png, info));
    out.height = static_cast<int>(png_get_image_height(png, info));
    out.channels = png_get_channels(png, info);
    out.bit_depth = png_get_bit_depth(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    raw.resize(rowbytes * out.height);
    rows.resize(out.height);
    for (int y = 0; y < out.height; ++y) rows[y] = raw.data() + y * rowbytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    const std::size_t n = static_cast<std::size_t>(out.width) * out.height * out.channels;
    out.samples.resize(n);
    if (out.bit_depth == 16) {
        for (std::size_t i = 0; i < n; ++i) out.samples[i] = static_cast<std::uint16_t>(raw[2 * i] | (raw[2 * i + 1] << 8));
    } else {
        for (std::size_t i = 0; i < n; ++i) out.samples[i] = raw[i];
    }
    return out;
}

inline void write_png(const fs::path& path, const PngPixels& px) {
    detail::require(px.channels == 1 || px.channels == 3, "write_png: 1 or 3 channels required");
    detail::require(px.bit_depth == 8 || px.bit_depth == 16, "write_png: bit depth must be 8 or 16");
    FilePtr fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) throw IoError("cannot write " + path.string());
    std::string err;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
    if (!png) throw CodecError(path.string() + ": libpng initialization failed");
    png_infop info = png_create_info_struct(png);
    const int bpp = px.bit_depth / 8;
    const std::size_t rowbytes = static_cast<std::size_t>(px.width) * px.channels * bpp;
    std::vector<std::uint8_t> raw(rowbytes * px.height);
    for (std::size_t i = 0; i < px.samples.size(); ++i) {
        if (bpp == 2) {  // PNG stores big-endian
            raw[2 * i] = static_cast<std::uint8_t>(px.samples[i] >> 8);
            raw[2 * i + 1] = static_cast<std::uint8_t>(px.samples[i] & 0xFF);
        } else {
            raw[i] = static_cast<std::uint8_t>(px.samples[i]);
        }
    }
    std::vector<png_bytep> rows(px.height);
    for (int y = 0; y < px.height; ++y) rows[y] = raw.data() + y * rowbytes;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw CodecError(path.string() + ": " + (err.empty() ? "encode error" : err));
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, px.width, px.height, px.bit_depth,
                 px.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

inline std::uint16_t quantize(float v, int maxval) {
    const float c = std::clamp(std::isfinite(v) ? v : 0.0f, 0.0f, 1.0f);
    return static_cast<std::uint16_t>(std::lround(c * static_cast<float>(maxval)));
}

inline PngPixels tensor_to_png(const Tensor<float>& t, int bit_depth) {
    detail::require(t.channels == 1 || t.channels == 3, "PNG export needs 1 or 3 channels, got " + shape_str(t));
    detail::require(!t.empty(), "PNG export of an empty tensor");
    const int maxval = bit_depth == 16 ? 65535 : 255;
    PngPixels px{t.width, t.height, t.channels, bit_depth, {}};
    px.samples.resize(t.size());
    const std::size_t n = t.plane_size();
    for (std::size_t p = 0; p < n; ++p)
        for (int c = 0; c < t.channels; ++c) px.samples[p * t.channels + c] = quantize(t.data[c * n + p], maxval);
    return px;
}

}  // namespace detail

/// RGB image in [0,1]; grayscale files are replicated to three channels.
inline ImageTensor load_image(const fs::path& path) {
    const auto px = detail::read_png(path);
    const float scale = 1.0f / static_cast<float>(px.bit_depth == 16 ? 65535 : 255);
    ImageTensor img(3, px.height, px.width);
    const std::size_t n = img.plane_size();
    for (std::size_t p = 0; p < n; ++p)
        for (int c = 0; c < 3; ++c) {
            const int src = px.channels == 1 ? 0 : c;
            img.data[c * n + p] = static_cast<float>(px.samples[p * px.channels + src]) * scale;
        }
    return img;
}

/// Binary mask: a pixel is 1 when its (first channel) value exceeds 0.5.
inline MaskMap load_mask(const fs::path& path) {
    const auto px = detail::read_png(path);
    const int maxval = px.bit_depth == 16 ? 65535 : 255;
    MaskMap m(1, px.height, px.width);
    for (std::size_t p = 0; p < m.size(); ++p)
        m.data[p] = 2 * static_cast<int>(px.samples[p * px.channels]) > maxval ? 1.0f : 0.0f;
    return m;
}

/// 8-bit PNG, values clamped to [0,1] and rounded.
inline void save_image(const Tensor<float>& img, const fs::path& path) {
    detail::write_png(path, detail::tensor_to_png(img, 8));
}

/// 16-bit grayscale PNG, value = round(v * 65535).
inline void save_png16(const MaskMap& m, const fs::path& path) {
    detail::require(m.channels == 1, "save_png16: single-channel map required");
    detail::write_png(path, detail::tensor_to_png(m, 16));
}

/// Raw 16-bit gray samples (for label maps). Values must fit in 16 bits.
inline void save_labels_png16(const std::vector<int>& labels, int height, int width, const fs::path& path) {
    detail::require(labels.size() == static_cast<std::size_t>(height) * width, "save_labels_png16: size mismatch");
    detail::PngPixels px{width, height, 1, 16, {}};
    px.samples.resize(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        detail::require(labels[i] >= 0 && labels[i] <= 65535, "save_labels_png16: label out of 16-bit range");
        px.samples[i] = static_cast<std::uint16_t>(labels[i]);
    }
    detail::write_png(path, px);
}

inline std::vector<int> load_labels_png16(const fs::path& path, int* height = nullptr, int* width = nullptr) {
    const auto px = detail::read_png(path);
    if (height) *height = px.height;
    if (width) *width = px.width;
    std::vector<int> out(static_cast<std::size_t>(px.width) * px.height);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = px.samples[i * px.channels];
    return out;
}

// ---------------------------------------------------------------------------
// Dataset layout

enum class Split { train, test };

struct DatasetItem {
    fs::path image;
    Split split = Split::train;
    std::string defect_type = "good";
    std::optional<fs::path> gt_mask;
    bool missing_mask = false;  // abnormal test item whose mask file was not found

    bool is_normal() const { return defect_type == "good"; }
};

namespace detail {

inline std::vector<fs::path> sorted_pngs(const fs::path& dir) {
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

inline std::vector<fs::path> sorted_subdirs(const fs::path& dir) {
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory()) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace detail

using WarningSink = std::function<void(const std::string&)>;

inline void warn_stderr(const std::string& msg) { std::cerr << "warning: " << msg << '\n'; }

/// Train items first, then test items grouped by defect type; lexicographic within each.
/// A missing test/ directory yields train items only.
inline std::vector<DatasetItem> scan_dataset(const fs::path& root, const std::string& category,
                                             const WarningSink& warn = warn_stderr) {
    const fs::path base = root / category;
    if (!fs::is_directory(root)) throw IoError("dataset root does not exist: " + root.string());
    const fs::path train_dir = base / "train" / "good";
    if (!fs::is_directory(train_dir)) throw IoError("missing training directory: expected " + train_dir.string());

    std::vector<DatasetItem> items;
    for (const auto& p : detail::sorted_pngs(train_dir)) items.push_back({p, Split::train, "good", std::nullopt, false});

    const fs::path test_dir = base / "test";
    if (!fs::is_directory(test_dir)) return items;
    for (const auto& type_dir : detail::sorted_subdirs(test_dir)) {
        const std::string type = type_dir.filename().string();
        for (const auto& p : detail::sorted_pngs(type_dir)) {
            DatasetItem it{p, Split::test, type, std::nullopt, false};
            if (type != "good") {
                const fs::path mask = base / "ground_truth" / type / (p.stem().string() + "_mask.png");
                if (fs::is_regular_file(mask)) {
                    it.gt_mask = mask;
                } else {
                    it.missing_mask = true;
                    if (warn) warn("no ground-truth mask for " + p.string() + " (expected " + mask.string() + ")");
                }
            }
            items.push_back(std::move(it));
        }
    }
    return items;
}

// ---------------------------------------------------------------------------
// Synthetic dataset

enum class Texture { stripes, checker, blobs };
enum class DefectShape { square, ellipse };

inline const char* texture_name(Texture t) {
    switch (t) {
        case Texture::stripes: return "stripes";
        case Texture::checker: return "checker";
        case Texture::blobs: return "blobs";
    }
    return "?";
}

inline Texture parse_texture(const std::string& s) {
    if (s == "stripes") return Texture::stripes;
    if (s == "checker") return Texture::checker;
    if (s == "blobs") return Texture::blobs;
    throw InvalidInput("unknown texture '" + s + "' (expected stripes, checker or blobs)");
}

/// palette: saturated colors absent from the texture; random: uniform RGB like a
/// SURF fill, kept away from both texture tones; tone: one of the texture's own tones.
enum class DefectColor { palette, random, tone };

inline const char* defect_color_name(DefectColor c) {
    switch (c) {
        case DefectColor::palette: return "palette";
        case DefectColor::random: return "random";
        case DefectColor::tone: return "tone";
    }
    return "?";
}

inline DefectColor parse_defect_color(const std::string& s) {
    if (s == "palette") return DefectColor::palette;
    if (s == "random") return DefectColor::random;
    if (s == "tone") return DefectColor::tone;
    throw InvalidInput("unknown defect color '" + s + "' (expected palette, random or tone)");
}

inline const char* defect_name(DefectShape d) { return d == DefectShape::square ? "square" : "ellipse"; }

inline DefectShape parse_defect(const std::string& s) {
    if (s == "square") return DefectShape::square;
    if (s == "ellipse") return DefectShape::ellipse;
    throw InvalidInput("unknown defect '" + s + "' (expected square or ellipse)");
}

struct SynthConfig {
    int image_size = 64;
    int n_train = 100;
    int n_test_normal = 20;
    int n_test_abnormal = 20;
    Texture texture = Texture::stripes;
    DefectShape defect = DefectShape::square;
    DefectColor defect_color = DefectColor::random;
    int defect_min = 8;
    int defect_max = 16;
    int period = 8;
    std::uint64_t seed = 0;
    std::string category = "synthetic";

    void validate() const {
        detail::require(image_size >= 8, "SynthConfig: image_size must be >= 8");
        detail::require(n_train >= 1 && n_test_normal >= 1 && n_test_abnormal >= 0,
                        "SynthConfig: n_train and n_test_normal must be >= 1, n_test_abnormal >= 0");
        detail::require(defect_min >= 1 && defect_min <= defect_max && defect_max < image_size,
                        "SynthConfig: need 1 <= defect_min <= defect_max < image_size");
        detail::require(period >= 2, "SynthConfig: period must be >= 2");
        detail::require(!category.empty(), "SynthConfig: empty category");
    }
};

namespace detail {

struct SynthImage {
    ImageTensor img;
    float tones[2][3];
};

// Two-tone texture; the phase and the tones jitter per image.
inline SynthImage synth_texture(const SynthConfig& cfg, std::mt19937_64& rng) {
    const int n = cfg.image_size;
    std::uniform_int_distribution<int> phase(0, cfg.period - 1);
    std::uniform_real_distribution<float> jitter(-0.04f, 0.04f);
    const float dark[3] = {0.25f + jitter(rng), 0.30f + jitter(rng), 0.35f + jitter(rng)};
    const float light[3] = {0.70f + jitter(rng), 0.72f + jitter(rng), 0.65f + jitter(rng)};
    const int px = phase(rng), py = phase(rng);
    SynthImage out;
    for (int c = 0; c < 3; ++c) {
        out.tones[0][c] = dark[c];
        out.tones[1][c] = light[c];
    }
    ImageTensor& img = out.img;
    img = ImageTensor(3, n, n);
    std::vector<float> field(static_cast<std::size_t>(n) * n);
    if (cfg.texture == Texture::blobs) {
        // sum of a few smooth bumps, thresholded at its median
        std::uniform_real_distribution<float> pos(0.0f, static_cast<float>(n));
        std::vector<std::pair<float, float>> centers(static_cast<std::size_t>(std::max(4, n * n / 256)));
        for (auto& c : centers) c = {pos(rng), pos(rng)};
        const float s2 = 2.0f * static_cast<float>(cfg.period * cfg.period) / 4.0f;
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                float acc = 0;
                for (const auto& [cy, cx] : centers) {
                    const float dy = y - cy, dx = x - cx;
                    acc += std::exp(-(dy * dy + dx * dx) / s2);
                }
                field[static_cast<std::size_t>(y) * n + x] = acc;
            }
        auto sorted = field;
        std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
        const float med = sorted[sorted.size() / 2];
        for (auto& v : field) v = v > med ? 1.0f : 0.0f;
    } else {
        const int half = cfg.period / 2;
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                const bool sx = ((x + px) % cfg.period) < half;
                const bool sy = ((y + py) % cfg.period) < half;
                const bool on = cfg.texture == Texture::stripes ? sx : (sx != sy);
                field[static_cast<std::size_t>(y) * n + x] = on ? 1.0f : 0.0f;
            }
    }
    const std::size_t hw = field.size();
    for (int c = 0; c < 3; ++c)
        for (std::size_t p = 0; p < hw; ++p) img.data[c * hw + p] = field[p] > 0.5f ? light[c] : dark[c];
    return out;
}

inline constexpr float kMinDefectContrast = 0.3f;

// Solid patch; returns its binary mask.
inline MaskMap synth_defect(SynthImage& si, const SynthConfig& cfg, std::mt19937_64& rng) {
    ImageTensor& img = si.img;
    const int n = cfg.image_size;
    std::uniform_int_distribution<int> size(cfg.defect_min, cfg.defect_max);
    const int h = size(rng), w = size(rng);
    std::uniform_int_distribution<int> oy(0, n - h), ox(0, n - w);
    const int y0 = oy(rng), x0 = ox(rng);
    static constexpr float palette[4][3] = {{0.95f, 0.10f, 0.10f}, {0.10f, 0.85f, 0.15f},
                                            {0.10f, 0.15f, 0.95f}, {0.95f, 0.90f, 0.05f}};
    float col[3];
    if (cfg.defect_color == DefectColor::palette) {
        std::uniform_int_distribution<int> pick(0, 3);
        std::copy_n(palette[pick(rng)], 3, col);
    } else if (cfg.defect_color == DefectColor::tone) {
        std::uniform_int_distribution<int> pick(0, 1);
        std::copy_n(si.tones[pick(rng)], 3, col);
    } else {
        // uniform RGB, redrawn until it is at least kMinDefectContrast (max-norm) from both tones
        std::uniform_real_distribution<float> unit(0.0f, 1.0f);
        auto dist = [&](const float* t) {
            float d = 0;
            for (int c = 0; c < 3; ++c) d = std::max(d, std::abs(col[c] - t[c]));
            return d;
        };
        do {
            for (auto& v : col) v = unit(rng);
        } while (dist(si.tones[0]) < kMinDefectContrast || dist(si.tones[1]) < kMinDefectContrast);
    }
    MaskMap mask(1, n, n);
    const float cy = y0 + (h - 1) / 2.0f, cx = x0 + (w - 1) / 2.0f;
    const float ry = h / 2.0f, rx = w / 2.0f;
    const std::size_t hw = img.plane_size();
    for (int y = y0; y < y0 + h; ++y)
        for (int x = x0; x < x0 + w; ++x) {
            if (cfg.defect == DefectShape::ellipse) {
                const float dy = (y - cy) / ry, dx = (x - cx) / rx;
                if (dy * dy + dx * dx > 1.0f) continue;
            }
            const std::size_t p = static_cast<std::size_t>(y) * n + x;
            mask.data[p] = 1.0f;
            for (int c = 0; c < 3; ++c) img.data[c * hw + p] = col[c];
        }
    return mask;
}

inline std::string indexed_name(int i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%03d.png", i);
    return buf;
}

}  // namespace detail

/// Writes a synthetic dataset under out_root/<category>. Every image draws from its own
/// seed derived from the master seed, so output does not depend on call order.
inline fs::path generate_synthetic(const SynthConfig& cfg, const fs::path& out_root) {
    cfg.validate();
    const fs::path base = out_root / cfg.category;
    const fs::path train = base / "train" / "good";
    const fs::path test_good = base / "test" / "good";
    const std::string defect_dir = defect_name(cfg.defect);
    const fs::path test_bad = base / "test" / defect_dir;
    const fs::path gt = base / "ground_truth" / defect_dir;
    std::error_code ec;
    for (const auto& d : {train, test_good})
        if (fs::create_directories(d, ec); ec) throw IoError("cannot create " + d.string() + ": " + ec.message());
    if (cfg.n_test_abnormal > 0)
        for (const auto& d : {test_bad, gt})
            if (fs::create_directories(d, ec); ec) throw IoError("cannot create " + d.string() + ": " + ec.message());

    auto rng_for = [&](std::uint64_t group, int i) { return std::mt19937_64(mix_seed(mix_seed(cfg.seed, group), i)); };
    for (int i = 0; i < cfg.n_train; ++i) {
        auto rng = rng_for(1, i);
        save_image(detail::synth_texture(cfg, rng).img, train / detail::indexed_name(i));
    }
    for (int i = 0; i < cfg.n_test_normal; ++i) {
        auto rng = rng_for(2, i);
        save_image(detail::synth_texture(cfg, rng).img, test_good / detail::indexed_name(i));
    }
    for (int i = 0; i < cfg.n_test_abnormal; ++i) {
        auto rng = rng_for(3, i);
        auto si = detail::synth_texture(cfg, rng);
        const auto mask = detail::synth_defect(si, cfg, rng);
        const std::string name = detail::indexed_name(i);
        save_image(si.img, test_bad / name);
        save_image(mask, gt / (fs::path(name).stem().string() + "_mask.png"));
    }
    return base;
}

}  // namespace tsdn
