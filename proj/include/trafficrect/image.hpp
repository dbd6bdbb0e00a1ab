#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include <png.h>

#include "trafficrect/error.hpp"

namespace trafficrect {

/// 8-bit interleaved raster, row-major, 1 (gray), 3 (RGB) or 4 (RGBA) channels.
struct Raster {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<std::uint8_t> pixels;

    Raster() = default;
    Raster(int w, int h, int c, std::uint8_t fill = 0)
        : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, fill) {
        validate();
    }

    void validate() const {
        if (width <= 0 || height <= 0) fail(ErrorCode::validation, "raster dimensions must be positive");
        if (channels != 1 && channels != 3 && channels != 4)
            fail(ErrorCode::validation, "raster must have 1, 3 or 4 channels");
        if (pixels.size() != static_cast<std::size_t>(width) * height * channels)
            fail(ErrorCode::validation, "raster buffer length does not match dimensions");
    }

    std::uint8_t& at(int x, int y, int c) {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    std::uint8_t at(int x, int y, int c) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }

    friend bool operator==(const Raster&, const Raster&) = default;
};

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::io, "cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCode::io, "short write to " + path);
}

// ---------------------------------------------------------------- PNG

inline bool looks_like_png(std::span<const std::uint8_t> bytes) {
    static constexpr std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
    return bytes.size() >= 8 && std::memcmp(bytes.data(), sig, 8) == 0;
}

inline Raster decode_png(std::span<const std::uint8_t> bytes) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
        fail(ErrorCode::decode, std::string("PNG decode failed: ") + image.message);

    int channels = 4;
    if ((image.format & PNG_FORMAT_FLAG_ALPHA) == 0) channels = (image.format & PNG_FORMAT_FLAG_COLOR) ? 3 : 1;
    image.format = channels == 4 ? PNG_FORMAT_RGBA : (channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY);

    Raster out;
    out.width = static_cast<int>(image.width);
    out.height = static_cast<int>(image.height);
    out.channels = channels;
    out.pixels.resize(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
        png_image_free(&image);
        fail(ErrorCode::decode, std::string("PNG decode failed: ") + image.message);
    }
    out.validate();
    return out;
}

inline std::vector<std::uint8_t> encode_png(const Raster& raster) {
    raster.validate();
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(raster.width);
    image.height = static_cast<png_uint_32>(raster.height);
    image.format = raster.channels == 4 ? PNG_FORMAT_RGBA : (raster.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY);

    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&image, nullptr, &size, 0, raster.pixels.data(), 0, nullptr))
        fail(ErrorCode::io, std::string("PNG encode failed: ") + image.message);
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&image, out.data(), &size, 0, raster.pixels.data(), 0, nullptr))
        fail(ErrorCode::io, std::string("PNG encode failed: ") + image.message);
    out.resize(size);
    return out;
}

// ---------------------------------------------------------------- TIFF
// Baseline uncompressed TIFF only: 8 bits per sample, chunky planar
// configuration, gray/RGB/RGBA, any strip layout. Enough for fixtures.

namespace detail {

class TiffReader {
public:
    explicit TiffReader(std::span<const std::uint8_t> b) : bytes_(b) {
        if (b.size() < 8) fail(ErrorCode::decode, "TIFF too short");
        if (b[0] == 'I' && b[1] == 'I') little_ = true;
        else if (b[0] == 'M' && b[1] == 'M') little_ = false;
        else fail(ErrorCode::decode, "not a TIFF byte-order mark");
        if (u16(2) != 42) fail(ErrorCode::decode, "bad TIFF magic");
    }

    std::uint16_t u16(std::size_t off) const {
        need(off, 2);
        return little_ ? static_cast<std::uint16_t>(bytes_[off] | bytes_[off + 1] << 8)
                       : static_cast<std::uint16_t>(bytes_[off] << 8 | bytes_[off + 1]);
    }
    std::uint32_t u32(std::size_t off) const {
        need(off, 4);
        const std::uint32_t a = bytes_[off], b = bytes_[off + 1], c = bytes_[off + 2], d = bytes_[off + 3];
        return little_ ? (a | b << 8 | c << 16 | d << 24) : (a << 24 | b << 16 | c << 8 | d);
    }
    void need(std::size_t off, std::size_t n) const {
        if (off + n > bytes_.size()) fail(ErrorCode::decode, "TIFF offset out of range");
    }

    std::vector<std::uint32_t> values(std::size_t entry) const {
        const std::uint16_t type = u16(entry + 2);
        const std::uint32_t count = u32(entry + 4);
        const std::size_t width = type == 3 ? 2 : (type == 4 ? 4 : (type == 1 ? 1 : 0));
        if (width == 0) fail(ErrorCode::decode, "unsupported TIFF field type");
        std::size_t off = entry + 8;
        if (width * count > 4) off = u32(entry + 8);
        need(off, width * count);
        std::vector<std::uint32_t> out(count);
        for (std::uint32_t i = 0; i < count; ++i)
            out[i] = width == 1 ? bytes_[off + i] : (width == 2 ? u16(off + 2 * i) : u32(off + 4 * i));
        return out;
    }

    std::span<const std::uint8_t> bytes_;
    bool little_ = true;
};

}  // namespace detail

inline bool looks_like_tiff(std::span<const std::uint8_t> b) {
    return b.size() >= 4 && ((b[0] == 'I' && b[1] == 'I' && b[2] == 42 && b[3] == 0) ||
                             (b[0] == 'M' && b[1] == 'M' && b[2] == 0 && b[3] == 42));
}

inline Raster decode_tiff(std::span<const std::uint8_t> bytes) {
    detail::TiffReader r(bytes);
    const std::uint32_t ifd = r.u32(4);
    const std::uint16_t n = r.u16(ifd);
    std::uint32_t width = 0, height = 0, spp = 1, compression = 1, planar = 1, rows_per_strip = 0;
    std::vector<std::uint32_t> bits{8}, offsets, counts;
    for (std::uint16_t i = 0; i < n; ++i) {
        const std::size_t e = ifd + 2 + 12u * i;
        const auto v = r.values(e);
        switch (r.u16(e)) {
            case 256: width = v.at(0); break;
            case 257: height = v.at(0); break;
            case 258: bits = v; break;
            case 259: compression = v.at(0); break;
            case 273: offsets = v; break;
            case 277: spp = v.at(0); break;
            case 278: rows_per_strip = v.at(0); break;
            case 279: counts = v; break;
            case 284: planar = v.at(0); break;
            default: break;
        }
    }
    if (compression != 1) fail(ErrorCode::decode, "compressed TIFF is not supported");
    if (planar != 1) fail(ErrorCode::decode, "planar TIFF is not supported");
    for (auto b : bits)
        if (b != 8) fail(ErrorCode::decode, "only 8-bit TIFF samples are supported");
    if (spp != 1 && spp != 3 && spp != 4) fail(ErrorCode::decode, "unsupported TIFF samples per pixel");
    if (offsets.empty() || offsets.size() != counts.size()) fail(ErrorCode::decode, "TIFF strip table malformed");
    if (width == 0 || height == 0) fail(ErrorCode::decode, "TIFF has zero dimensions");
    (void)rows_per_strip;

    Raster out;
    out.width = static_cast<int>(width);
    out.height = static_cast<int>(height);
    out.channels = static_cast<int>(spp);
    out.pixels.reserve(static_cast<std::size_t>(width) * height * spp);
    for (std::size_t s = 0; s < offsets.size(); ++s) {
        r.need(offsets[s], counts[s]);
        out.pixels.insert(out.pixels.end(), bytes.begin() + offsets[s], bytes.begin() + offsets[s] + counts[s]);
    }
    if (out.pixels.size() < static_cast<std::size_t>(width) * height * spp)
        fail(ErrorCode::decode, "TIFF strips shorter than image");
    out.pixels.resize(static_cast<std::size_t>(width) * height * spp);
    return out;
}

/// Writes a single-strip little-endian uncompressed TIFF.
inline std::vector<std::uint8_t> encode_tiff(const Raster& raster) {
    raster.validate();
    std::vector<std::uint8_t> out;
    auto put16 = [&](std::uint16_t v) { out.push_back(v & 0xFF); out.push_back(v >> 8); };
    auto put32 = [&](std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    };
    const auto spp = static_cast<std::uint16_t>(raster.channels);
    const auto data_size = static_cast<std::uint32_t>(raster.pixels.size());
    const std::uint16_t entries = raster.channels == 4 ? 11 : 10;
    const std::uint32_t ifd_offset = 8;
    const std::uint32_t bits_offset = ifd_offset + 2 + 12u * entries + 4;
    const std::uint32_t data_offset = bits_offset + 2u * spp;

    out.insert(out.end(), {'I', 'I'});
    put16(42);
    put32(ifd_offset);
    put16(entries);
    auto entry = [&](std::uint16_t tag, std::uint16_t type, std::uint32_t count, std::uint32_t value) {
        put16(tag); put16(type); put32(count);
        if (type == 3 && count == 1) { put16(static_cast<std::uint16_t>(value)); put16(0); }
        else put32(value);
    };
    entry(256, 4, 1, static_cast<std::uint32_t>(raster.width));
    entry(257, 4, 1, static_cast<std::uint32_t>(raster.height));
    if (spp == 1) entry(258, 3, 1, 8);
    else entry(258, 3, spp, bits_offset);
    entry(259, 3, 1, 1);
    entry(262, 3, 1, spp == 1 ? 1 : 2);
    entry(273, 4, 1, data_offset);
    entry(277, 3, 1, spp);
    entry(278, 4, 1, static_cast<std::uint32_t>(raster.height));
    entry(279, 4, 1, data_size);
    entry(284, 3, 1, 1);
    if (raster.channels == 4) entry(338, 3, 1, 2);  // unassociated alpha
    put32(0);
    for (std::uint16_t i = 0; i < spp; ++i) put16(8);
    out.resize(data_offset);
    out.insert(out.end(), raster.pixels.begin(), raster.pixels.end());
    return out;
}

/// Decodes PNG or uncompressed TIFF by magic number.
inline Raster decode_image(std::span<const std::uint8_t> bytes) {
    if (looks_like_png(bytes)) return decode_png(bytes);
    if (looks_like_tiff(bytes)) return decode_tiff(bytes);
    fail(ErrorCode::decode, "unrecognized image format (expected PNG or TIFF)");
}

inline Raster load_image(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    return decode_image(bytes);
}

inline void save_image(const std::string& path, const Raster& raster) {
    const bool tiff = path.size() >= 4 && (path.ends_with(".tif") || path.ends_with(".tiff"));
    const auto bytes = tiff ? encode_tiff(raster) : encode_png(raster);
    write_file_bytes(path, bytes);
}

}  // namespace trafficrect
