#pragma once

// Model checkpoint container.
//
//   "TSDN" | u32 version | u32 input_h | u32 input_w | u32 base_channels |
//   u32 latent_channels | u8 flags | u32 tensor_count |
//   tensor_count x ( u32 name_len | name bytes (UTF-8) | u8 dtype | u32 ndim |
//                    ndim x u32 dim | prod(dims) x f32 )
//
// All integers and floats are little-endian. flags: bit0 skips into the
// abnormality decoder, bit1 skips into the normality decoder, bit2 abnormality
// decoder enabled, bit3 normality estimator enabled.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "tsdn/error.hpp"
#include "tsdn/network.hpp"

namespace tsdn {

inline constexpr char kCheckpointMagic[4] = {'T', 'S', 'D', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 1;

namespace detail {

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    std::vector<std::uint8_t> take() { return std::move(buf_); }

private:
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    ByteReader(const std::vector<std::uint8_t>& buf, std::string what) : buf_(buf), what_(std::move(what)) {}

    std::uint8_t u8() {
        need(1);
        return buf_[pos_++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_++]) << (8 * i);
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == buf_.size(); }
    [[noreturn]] void fail(const std::string& msg) const { throw CodecError(what_ + ": " + msg); }

private:
    void need(std::size_t n) const {
        if (buf_.size() - pos_ < n) fail("truncated data");
    }

    const std::vector<std::uint8_t>& buf_;
    std::string what_;
    std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const TsdnModel<float>& model) {
    const auto& cfg = model.config();
    detail::ByteWriter w;
    w.bytes(kCheckpointMagic, 4);
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(cfg.input_h));
    w.u32(static_cast<std::uint32_t>(cfg.input_w));
    w.u32(static_cast<std::uint32_t>(cfg.base_channels));
    w.u32(static_cast<std::uint32_t>(cfg.latent_channels));
    w.u8(static_cast<std::uint8_t>((cfg.use_skips_dcd_a ? 1 : 0) | (cfg.use_skips_dcd_n ? 2 : 0) |
                                   (cfg.enable_dcd_a ? 4 : 0) | (cfg.enable_fne ? 8 : 0)));
    const auto& items = model.params().items();
    w.u32(static_cast<std::uint32_t>(items.size()));
    for (const auto& p : items) {
        w.u32(static_cast<std::uint32_t>(p.name.size()));
        w.bytes(p.name.data(), p.name.size());
        w.u8(kDtypeF32);
        w.u32(static_cast<std::uint32_t>(p.shape.size()));
        for (int d : p.shape) w.u32(static_cast<std::uint32_t>(d));
        for (float v : p.value) w.f32(v);
    }
    return w.take();
}

inline TsdnModel<float> decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& what = "checkpoint") {
    detail::ByteReader r(bytes, what);
    if (r.str(4) != std::string(kCheckpointMagic, 4)) r.fail("bad magic (not a TSDN checkpoint)");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) r.fail("unsupported format version " + std::to_string(version));
    NetworkConfig cfg;
    cfg.input_h = static_cast<int>(r.u32());
    cfg.input_w = static_cast<int>(r.u32());
    cfg.base_channels = static_cast<int>(r.u32());
    cfg.latent_channels = static_cast<int>(r.u32());
    const std::uint8_t flags = r.u8();
    cfg.use_skips_dcd_a = flags & 1;
    cfg.use_skips_dcd_n = flags & 2;
    cfg.enable_dcd_a = flags & 4;
    cfg.enable_fne = flags & 8;

    ParamSet<float> params;
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.str(r.u32());
        if (r.u8() != kDtypeF32) r.fail("tensor '" + name + "' has an unsupported dtype");
        std::vector<int> shape(r.u32());
        for (auto& d : shape) d = static_cast<int>(r.u32());
        const std::size_t idx = params.add(name, shape);
        for (auto& v : params[idx].value) v = r.f32();
    }
    if (!r.done()) r.fail("trailing bytes after the last tensor");
    try {
        return TsdnModel<float>(cfg, std::move(params));
    } catch (const InvalidInput& e) {
        r.fail(e.what());
    }
}

inline void save_checkpoint(const TsdnModel<float>& model, const std::filesystem::path& path) {
    detail::write_file_bytes(path, encode_checkpoint(model));
}

inline TsdnModel<float> load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(detail::read_file_bytes(path), path.string());
}

}  // namespace tsdn
