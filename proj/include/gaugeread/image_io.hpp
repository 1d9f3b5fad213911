#pragma once

// 8-bit image I/O: PNG through libpng's simplified API, binary PGM/PPM by hand.

#include "gaugeread/raster.hpp"

#include <png.h>

#include <cctype>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

namespace gauge {

class ImageIoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageIoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ImageIoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ImageIoError("short write to " + path.string());
}

inline Raster decode_png(std::span<const std::uint8_t> bytes)
{
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
        throw ImageIoError(std::string("decode_png: ") + image.message);
    }
    const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
    image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    Raster out(static_cast<int>(image.width), static_cast<int>(image.height), color ? 3 : 1);
    if (!png_image_finish_read(&image, nullptr, out.data().data(), 0, nullptr)) {
        png_image_free(&image);
        throw ImageIoError(std::string("decode_png: ") + image.message);
    }
    return out;
}

inline std::vector<std::uint8_t> encode_png(const Raster& img)
{
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width());
    image.height = static_cast<png_uint_32>(img.height());
    image.format = img.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&image, nullptr, &size, 0, img.data().data(), 0, nullptr)) {
        throw ImageIoError(std::string("encode_png: ") + image.message);
    }
    std::vector<std::uint8_t> buf(size);
    if (!png_image_write_to_memory(&image, buf.data(), &size, 0, img.data().data(), 0, nullptr)) {
        throw ImageIoError(std::string("encode_png: ") + image.message);
    }
    buf.resize(size);
    return buf;
}

namespace detail {

inline int read_pnm_int(std::span<const std::uint8_t> b, std::size_t& pos)
{
    for (;;) {
        while (pos < b.size() && std::isspace(b[pos])) ++pos;
        if (pos < b.size() && b[pos] == '#') {
            while (pos < b.size() && b[pos] != '\n') ++pos;
            continue;
        }
        break;
    }
    if (pos >= b.size() || !std::isdigit(b[pos])) throw ImageIoError("decode_pnm: malformed header");
    long v = 0;
    while (pos < b.size() && std::isdigit(b[pos])) {
        v = v * 10 + (b[pos++] - '0');
        if (v > 1'000'000) throw ImageIoError("decode_pnm: header value out of range");
    }
    return static_cast<int>(v);
}

}  // namespace detail

/// Binary P5 (gray) or P6 (RGB), maxval <= 255.
inline Raster decode_pnm(std::span<const std::uint8_t> b)
{
    if (b.size() < 2 || b[0] != 'P' || (b[1] != '5' && b[1] != '6')) {
        throw ImageIoError("decode_pnm: not a binary PGM/PPM");
    }
    const int channels = b[1] == '5' ? 1 : 3;
    std::size_t pos = 2;
    const int w = detail::read_pnm_int(b, pos);
    const int h = detail::read_pnm_int(b, pos);
    const int maxval = detail::read_pnm_int(b, pos);
    if (maxval < 1 || maxval > 255) throw ImageIoError("decode_pnm: only 8-bit maxval supported");
    ++pos;  // single whitespace after maxval
    const std::size_t need = static_cast<std::size_t>(w) * h * channels;
    if (w < 1 || h < 1 || b.size() < pos + need) throw ImageIoError("decode_pnm: truncated data");
    std::vector<std::uint8_t> px(b.begin() + static_cast<std::ptrdiff_t>(pos),
                                 b.begin() + static_cast<std::ptrdiff_t>(pos + need));
    if (maxval != 255) {
        for (auto& v : px) v = quantize(v * 255.0 / maxval);
    }
    return Raster(w, h, channels, std::move(px));
}

inline std::vector<std::uint8_t> encode_pnm(const Raster& img)
{
    const std::string header = std::string(img.channels() == 1 ? "P5" : "P6") + "\n" +
                               std::to_string(img.width()) + " " + std::to_string(img.height()) +
                               "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), img.bytes().begin(), img.bytes().end());
    return out;
}

/// Sniffs the format from the magic bytes rather than the extension.
inline Raster decode_image(std::span<const std::uint8_t> bytes)
{
    static constexpr std::uint8_t kPngMagic[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngMagic, 8) == 0) return decode_png(bytes);
    return decode_pnm(bytes);
}

inline Raster read_image(const std::filesystem::path& path)
{
    return decode_image(read_file_bytes(path));
}

/// Writes PNG unless the extension is .pgm/.ppm.
inline void write_image(const std::filesystem::path& path, const Raster& img)
{
    const auto ext = path.extension().string();
    if (ext == ".pgm" || ext == ".ppm") {
        write_file_bytes(path, encode_pnm(img));
    } else {
        write_file_bytes(path, encode_png(img));
    }
}

inline bool is_image_path(const std::filesystem::path& p)
{
    const auto ext = p.extension().string();
    return ext == ".png" || ext == ".pgm" || ext == ".ppm";
}

}  // namespace gauge
