#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "tgl/errors.hpp"
#include "tgl/tensor.hpp"

namespace tgl {

// Reader and writer for the classic IDX container: a big-endian magic word
// (0x00000803 for byte images with three dimensions, 0x00000801 for byte
// label vectors), big-endian 32-bit extents, then raw unsigned bytes.

namespace detail {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

inline void put_u32_be(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>((v >> 24) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>(v & 0xff));
}

inline std::uint32_t get_u32_be(const std::string& buf, std::size_t at) {
    const auto b = [&](std::size_t i) {
        return static_cast<std::uint32_t>(static_cast<unsigned char>(buf[at + i]));
    };
    return (b(0) << 24) | (b(1) << 16) | (b(2) << 8) | b(3);
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw parse_error(path + ": cannot open");
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return buf;
}

inline void write_file(const std::string& path, const std::string& buf) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw parse_error(path + ": cannot open for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw parse_error(path + ": write failed");
}

inline void need_bytes(const std::string& path, const std::string& buf, std::size_t at,
                       std::size_t count, const char* what) {
    if (buf.size() < at + count)
        throw parse_error(path + ": truncated at byte " + std::to_string(buf.size()) +
                          ", expected " + what + " at offset " + std::to_string(at));
}

}  // namespace detail

// Writes images as bytes. Input is [N,1,H,W] or [N,H,W] with values in
// [0, 1]; each value is scaled to 0..255 and rounded.
inline void write_idx_images(const std::string& path, const Tensor& images) {
    Shape s = images.shape();
    if (s.size() == 4 && s[1] == 1) s = {s[0], s[2], s[3]};
    if (s.size() != 3)
        throw shape_error("idx images: expected [N,1,H,W] or [N,H,W], got " +
                          shape_str(images.shape()));
    std::string buf;
    buf.reserve(16 + images.size());
    detail::put_u32_be(buf, detail::kIdxImagesMagic);
    detail::put_u32_be(buf, static_cast<std::uint32_t>(s[0]));
    detail::put_u32_be(buf, static_cast<std::uint32_t>(s[1]));
    detail::put_u32_be(buf, static_cast<std::uint32_t>(s[2]));
    for (std::size_t i = 0; i < images.size(); ++i) {
        Real v = images[i];
        if (v < 0) v = 0;
        if (v > 1) v = 1;
        buf.push_back(static_cast<char>(static_cast<unsigned char>(v * 255 + Real(0.5))));
    }
    detail::write_file(path, buf);
}

// Header-only look at an image file: [N,1,H,W] without loading pixels.
inline Shape peek_idx_image_shape(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw parse_error(path + ": cannot open");
    char header[16];
    if (!in.read(header, 16))
        throw parse_error(path + ": truncated header, expected magic and three extents");
    const std::string buf(header, 16);
    if (detail::get_u32_be(buf, 0) != detail::kIdxImagesMagic)
        throw parse_error(path + ": wrong magic at offset 0 (images use 0x00000803)");
    const std::size_t n = detail::get_u32_be(buf, 4);
    const std::size_t h = detail::get_u32_be(buf, 8);
    const std::size_t w = detail::get_u32_be(buf, 12);
    if (n == 0 || h == 0 || w == 0) throw parse_error(path + ": zero extent in header");
    return {n, 1, h, w};
}

// Reads byte images into [N,1,H,W] with values scaled back to [0, 1].
inline Tensor read_idx_images(const std::string& path) {
    const std::string buf = detail::read_file(path);
    detail::need_bytes(path, buf, 0, 16, "magic and three extents");
    const std::uint32_t magic = detail::get_u32_be(buf, 0);
    if (magic != detail::kIdxImagesMagic)
        throw parse_error(path + ": wrong magic at offset 0 (found 0x" + [&] {
            char hex[16];
            std::snprintf(hex, sizeof hex, "%08x", magic);
            return std::string(hex);
        }() + ", images use 0x00000803)");
    const std::size_t n = detail::get_u32_be(buf, 4);
    const std::size_t h = detail::get_u32_be(buf, 8);
    const std::size_t w = detail::get_u32_be(buf, 12);
    if (n == 0 || h == 0 || w == 0)
        throw parse_error(path + ": zero extent in header");
    detail::need_bytes(path, buf, 16, n * h * w, "pixel payload");
    Tensor out(Shape{n, 1, h, w});
    for (std::size_t i = 0; i < n * h * w; ++i)
        out[i] = static_cast<Real>(static_cast<unsigned char>(buf[16 + i])) / Real(255);
    return out;
}

inline void write_idx_labels(const std::string& path, const std::vector<std::size_t>& labels) {
    std::string buf;
    buf.reserve(8 + labels.size());
    detail::put_u32_be(buf, detail::kIdxLabelsMagic);
    detail::put_u32_be(buf, static_cast<std::uint32_t>(labels.size()));
    for (std::size_t l : labels) {
        if (l > 255) throw value_error("idx labels: value " + std::to_string(l) + " exceeds a byte");
        buf.push_back(static_cast<char>(static_cast<unsigned char>(l)));
    }
    detail::write_file(path, buf);
}

inline std::vector<std::size_t> read_idx_labels(const std::string& path) {
    const std::string buf = detail::read_file(path);
    detail::need_bytes(path, buf, 0, 8, "magic and extent");
    const std::uint32_t magic = detail::get_u32_be(buf, 0);
    if (magic != detail::kIdxLabelsMagic)
        throw parse_error(path + ": wrong magic at offset 0 (labels use 0x00000801)");
    const std::size_t n = detail::get_u32_be(buf, 4);
    detail::need_bytes(path, buf, 8, n, "label payload");
    std::vector<std::size_t> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<unsigned char>(buf[8 + i]);
    return out;
}

}  // namespace tgl
