#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gauge {

/// 8-bit image grid, row-major, channels interleaved.
class Raster {
public:
    Raster() = default;

    Raster(int width, int height, int channels = 1, std::uint8_t fill = 0)
        : width_(width), height_(height), channels_(channels)
    {
        if (width < 1 || height < 1) {
            throw std::invalid_argument("Raster: width and height must be >= 1");
        }
        if (channels != 1 && channels != 3) {
            throw std::invalid_argument("Raster: channels must be 1 or 3");
        }
        data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
    }

    Raster(int width, int height, int channels, std::vector<std::uint8_t> data)
        : Raster(width, height, channels)
    {
        if (data.size() != data_.size()) {
            throw std::invalid_argument("Raster: data length must equal width*height*channels");
        }
        data_ = std::move(data);
    }

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    int channels() const noexcept { return channels_; }
    bool empty() const noexcept { return data_.empty(); }

    std::uint8_t& at(int x, int y, int c = 0)
    {
        return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
    }
    std::uint8_t at(int x, int y, int c = 0) const
    {
        return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
    }

    // Edge-replicated read.
    std::uint8_t clamped(int x, int y, int c = 0) const
    {
        return at(std::clamp(x, 0, width_ - 1), std::clamp(y, 0, height_ - 1), c);
    }

    bool contains(int x, int y) const noexcept
    {
        return x >= 0 && y >= 0 && x < width_ && y < height_;
    }

    std::span<std::uint8_t> data() noexcept { return data_; }
    std::span<const std::uint8_t> data() const noexcept { return data_; }
    const std::vector<std::uint8_t>& bytes() const noexcept { return data_; }

    friend bool operator==(const Raster&, const Raster&) = default;

private:
    int width_ = 0;
    int height_ = 0;
    int channels_ = 0;
    std::vector<std::uint8_t> data_;
};

/// Signed per-pixel gradients plus magnitude.
struct GradientField {
    int width = 0;
    int height = 0;
    std::vector<double> gx;
    std::vector<double> gy;
    std::vector<double> magnitude;

    std::size_t index(int x, int y) const noexcept
    {
        return static_cast<std::size_t>(y) * width + x;
    }
};

/// Odd-sized filter window (rows x cols).
struct FilterWindow {
    int rows = 3;
    int cols = 3;

    void validate() const
    {
        if (rows < 1 || cols < 1 || rows % 2 == 0 || cols % 2 == 0) {
            throw std::invalid_argument("FilterWindow: dimensions must be odd and >= 1");
        }
    }
};

/// Half-open column range [begin, end).
struct ColumnRange {
    int begin = 0;
    int end = 0;

    int size() const noexcept { return end - begin; }
    bool empty() const noexcept { return end <= begin; }
};

/// Round half away from zero and clamp to [0, 255]; the single quantization rule.
inline std::uint8_t quantize(double v) noexcept
{
    const double r = std::round(v);
    if (!(r > 0.0)) return 0;
    if (r >= 255.0) return 255;
    return static_cast<std::uint8_t>(r);
}

inline void require_gray(const Raster& img, const char* who)
{
    if (img.empty()) {
        throw std::invalid_argument(std::string(who) + ": empty raster");
    }
    if (img.channels() != 1) {
        throw std::invalid_argument(std::string(who) + ": expected a single-channel raster");
    }
}

/// Copy of the rectangle [x, x+w) x [y, y+h) clipped to the image.
inline Raster crop(const Raster& img, int x, int y, int w, int h)
{
    const int xa = std::max(0, x), ya = std::max(0, y);
    const int xb = std::min(img.width(), x + w), yb = std::min(img.height(), y + h);
    if (xb <= xa || yb <= ya) throw std::invalid_argument("crop: rectangle does not overlap the image");
    Raster out(xb - xa, yb - ya, img.channels());
    for (int yy = ya; yy < yb; ++yy)
        for (int xx = xa; xx < xb; ++xx)
            for (int c = 0; c < img.channels(); ++c) out.at(xx - xa, yy - ya, c) = img.at(xx, yy, c);
    return out;
}

}  // namespace gauge
