#pragma once

// Preprocessing primitives: luminosity grayscale, Gaussian smoothing,
// order-statistic median, Otsu binarization, Sobel gradients and Canny.
// Every border is handled by edge replication.

#include "gaugeread/raster.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace gauge {

inline Raster to_grayscale(const Raster& img)
{
    if (img.channels() != 3) {
        throw std::invalid_argument("to_grayscale: expected a 3-channel raster");
    }
    Raster out(img.width(), img.height(), 1);
    auto src = img.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        const double v = 0.299 * src[3 * i] + 0.587 * src[3 * i + 1] + 0.114 * src[3 * i + 2];
        dst[i] = quantize(v);
    }
    return out;
}

/// Accepts gray or color; color goes through the luminosity formula.
inline Raster ensure_gray(const Raster& img)
{
    return img.channels() == 1 ? img : to_grayscale(img);
}

/// Normalized 1-D Gaussian taps, radius ceil(3 sigma).
inline std::vector<double> gaussian_kernel(double sigma)
{
    if (!(sigma > 0.0)) {
        throw std::invalid_argument("gaussian_kernel: sigma must be > 0");
    }
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double w = std::exp(-(i * i) / (2.0 * sigma * sigma));
        k[i + radius] = w;
        sum += w;
    }
    for (double& w : k) w /= sum;
    return k;
}

/// Separable Gaussian; works per channel so degradations can reuse it on color.
inline Raster gaussian_blur(const Raster& img, double sigma)
{
    if (img.empty()) throw std::invalid_argument("gaussian_blur: empty raster");
    const auto k = gaussian_kernel(sigma);
    const int r = static_cast<int>(k.size() / 2);
    const int w = img.width();
    const int h = img.height();
    const int ch = img.channels();

    const int stride = w * ch;
    auto src = img.data();

    // Horizontal pass over an edge-padded row buffer.
    std::vector<double> tmp(static_cast<std::size_t>(stride) * h);
    std::vector<double> row(static_cast<std::size_t>(w + 2 * r) * ch);
    for (int y = 0; y < h; ++y) {
        for (int x = -r; x < w + r; ++x) {
            const int xs = std::clamp(x, 0, w - 1);
            for (int c = 0; c < ch; ++c) {
                row[static_cast<std::size_t>(x + r) * ch + c] = src[static_cast<std::size_t>(y) * stride + xs * ch + c];
            }
        }
        double* dst = &tmp[static_cast<std::size_t>(y) * stride];
        for (int i = 0; i < stride; ++i) {
            double acc = 0.0;
            for (int t = 0; t <= 2 * r; ++t) acc += k[t] * row[static_cast<std::size_t>(i) + static_cast<std::size_t>(t) * ch];
            dst[i] = acc;
        }
    }

    // Vertical pass, accumulating whole rows.
    Raster out(w, h, ch);
    auto dst = out.data();
    std::vector<double> acc(static_cast<std::size_t>(stride));
    for (int y = 0; y < h; ++y) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (int t = -r; t <= r; ++t) {
            const double kt = k[t + r];
            const double* s = &tmp[static_cast<std::size_t>(std::clamp(y + t, 0, h - 1)) * stride];
            for (int i = 0; i < stride; ++i) acc[i] += kt * s[i];
        }
        for (int i = 0; i < stride; ++i) dst[static_cast<std::size_t>(y) * stride + i] = quantize(acc[i]);
    }
    return out;
}

/// Order-statistic median over an M x N window.
inline Raster median_filter(const Raster& img, FilterWindow win = {})
{
    require_gray(img, "median_filter");
    win.validate();
    const int ry = win.rows / 2;
    const int rx = win.cols / 2;
    const std::size_t mid = static_cast<std::size_t>(win.rows * win.cols) / 2;
    Raster out(img.width(), img.height(), 1);
    std::vector<std::uint8_t> samples(static_cast<std::size_t>(win.rows * win.cols));
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            std::size_t n = 0;
            for (int dy = -ry; dy <= ry; ++dy)
                for (int dx = -rx; dx <= rx; ++dx) samples[n++] = img.clamped(x + dx, y + dy);
            std::nth_element(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(mid),
                             samples.end());
            out.at(x, y) = samples[mid];
        }
    }
    return out;
}

struct OtsuResult {
    int threshold = 0;
    Raster binary;
};

inline std::array<std::int64_t, 256> histogram(const Raster& img)
{
    std::array<std::int64_t, 256> hist{};
    for (auto v : img.data()) ++hist[v];
    return hist;
}

/// Between-class variance w0*w1*(mu0-mu1)^2 for class0 = levels <= t.
/// Computed from integer class sums so equal partitions give bit-equal values.
inline double otsu_between_class_variance(std::int64_t n0, std::int64_t sum0, std::int64_t n,
                                          std::int64_t sum)
{
    const std::int64_t n1 = n - n0;
    if (n0 == 0 || n1 == 0) return 0.0;
    const double w0 = static_cast<double>(n0) / static_cast<double>(n);
    const double w1 = static_cast<double>(n1) / static_cast<double>(n);
    const double mu0 = static_cast<double>(sum0) / static_cast<double>(n0);
    const double mu1 = static_cast<double>(sum - sum0) / static_cast<double>(n1);
    return w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
}

/// Otsu level of a histogram; smallest t wins ties. A single occupied level
/// is returned as is. An empty histogram yields 0.
inline int otsu_level(const std::array<std::int64_t, 256>& hist)
{
    std::int64_t n = 0;
    std::int64_t sum = 0;
    int levels = 0;
    int only_level = 0;
    for (int v = 0; v < 256; ++v) {
        n += hist[v];
        sum += hist[v] * v;
        if (hist[v] > 0) {
            ++levels;
            only_level = v;
        }
    }
    if (levels <= 1) return only_level;

    int best_t = 0;
    double best = -1.0;
    std::int64_t n0 = 0;
    std::int64_t sum0 = 0;
    for (int t = 0; t < 256; ++t) {
        n0 += hist[t];
        sum0 += hist[t] * t;
        const double var = otsu_between_class_variance(n0, sum0, n, sum);
        if (var > best) {
            best = var;
            best_t = t;
        }
    }
    return best_t;
}

/// Otsu threshold; binary is 255 where pixel > t.
/// A single-level image yields t = that level and an all-zero binary.
inline OtsuResult otsu_threshold(const Raster& img)
{
    require_gray(img, "otsu_threshold");
    const int best_t = otsu_level(histogram(img));

    OtsuResult res{best_t, Raster(img.width(), img.height(), 1)};
    auto src = img.data();
    auto dst = res.binary.data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > best_t ? 255 : 0;
    return res;
}

/// 3x3 Sobel, applied as cross-correlation; gy uses the transposed kernel.
inline GradientField sobel_gradients(const Raster& img)
{
    require_gray(img, "sobel_gradients");
    if (img.width() < 3 || img.height() < 3) {
        throw std::invalid_argument("sobel_gradients: image smaller than the 3x3 kernel");
    }
    GradientField g;
    g.width = img.width();
    g.height = img.height();
    const std::size_t n = static_cast<std::size_t>(g.width) * g.height;
    g.gx.resize(n);
    g.gy.resize(n);
    g.magnitude.resize(n);
    for (int y = 0; y < g.height; ++y) {
        for (int x = 0; x < g.width; ++x) {
            auto p = [&](int dx, int dy) { return static_cast<double>(img.clamped(x + dx, y + dy)); };
            const double gx = (p(1, -1) + 2 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2 * p(-1, 0) + p(-1, 1));
            const double gy = (p(-1, 1) + 2 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2 * p(0, -1) + p(1, -1));
            const auto i = g.index(x, y);
            g.gx[i] = gx;
            g.gy[i] = gy;
            g.magnitude[i] = std::sqrt(gx * gx + gy * gy);
        }
    }
    return g;
}

struct CannyParams {
    double sigma = 1.4;
    double low = 50.0;
    double high = 150.0;
};

struct CannyResult {
    Raster edges;            // 255 on edge pixels
    GradientField gradient;  // of the pre-smoothed image
};

namespace detail {

// Direction bin of the gradient: 0 -> 0 deg, 1 -> 45, 2 -> 90, 3 -> 135.
inline int direction_bin(double gx, double gy) noexcept
{
    double deg = std::atan2(gy, gx) * 180.0 / std::numbers::pi;
    if (deg < 0) deg += 180.0;
    if (deg < 22.5 || deg >= 157.5) return 0;
    if (deg < 67.5) return 1;
    if (deg < 112.5) return 2;
    return 3;
}

}  // namespace detail

inline CannyResult canny(const Raster& img, const CannyParams& params = {})
{
    require_gray(img, "canny_edges");
    if (!(params.low >= 0.0) || !(params.low < params.high)) {
        throw std::invalid_argument("canny_edges: require 0 <= low < high");
    }
    const Raster smooth = gaussian_blur(img, params.sigma);
    CannyResult res{Raster(img.width(), img.height(), 1), sobel_gradients(smooth)};
    const auto& g = res.gradient;
    const int w = g.width;
    const int h = g.height;

    // Non-maximum suppression along the quantized gradient direction.
    static constexpr int kOffsets[4][2] = {{1, 0}, {1, 1}, {0, 1}, {-1, 1}};
    std::vector<std::uint8_t> state(static_cast<std::size_t>(w) * h, 0);  // 1 weak, 2 strong
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const auto i = g.index(x, y);
            const double m = g.magnitude[i];
            if (m < params.low || m == 0.0) continue;
            const int bin = detail::direction_bin(g.gx[i], g.gy[i]);
            const int dx = kOffsets[bin][0];
            const int dy = kOffsets[bin][1];
            auto mag_at = [&](int xx, int yy) {
                xx = std::clamp(xx, 0, w - 1);
                yy = std::clamp(yy, 0, h - 1);
                return g.magnitude[g.index(xx, yy)];
            };
            // Strict on one side, non-strict on the other keeps plateaus one pixel wide.
            if (m > mag_at(x - dx, y - dy) && m >= mag_at(x + dx, y + dy)) {
                state[i] = m >= params.high ? 2 : 1;
            }
        }
    }

    // Hysteresis: grow strong pixels through 8-connected weak ones.
    std::vector<int> stack;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (state[g.index(x, y)] == 2) stack.push_back(y * w + x);
        }
    }
    auto edges = res.edges.data();
    while (!stack.empty()) {
        const int p = stack.back();
        stack.pop_back();
        if (edges[p]) continue;
        edges[p] = 255;
        const int px = p % w;
        const int py = p / w;
        for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
                const int nx = px + dx;
                const int ny = py + dy;
                if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
                const int q = ny * w + nx;
                if (!edges[q] && state[q] >= 1) stack.push_back(q);
            }
        }
    }
    return res;
}

inline Raster canny_edges(const Raster& img, double low, double high, double sigma = 1.4)
{
    return canny(img, CannyParams{sigma, low, high}).edges;
}

struct PreprocessParams {
    double gaussian_sigma = 1.4;
    FilterWindow median{3, 3};
};

/// Grayscale, Gaussian smoothing, then median denoising.
inline Raster preprocess(const Raster& img, const PreprocessParams& p = {})
{
    Raster gray = ensure_gray(img);
    if (p.gaussian_sigma > 0.0) gray = gaussian_blur(gray, p.gaussian_sigma);
    return median_filter(gray, p.median);
}

}  // namespace gauge
