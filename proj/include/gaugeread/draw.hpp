#pragma once

// Minimal rasterization: rectangles, convex polygons, thick lines and a
// seven-segment stroke font (digits, '.', '-'). No font files needed.

#include "gaugeread/raster.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string_view>
#include <vector>

namespace gauge {

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
};

inline void put_pixel(Raster& img, int x, int y, Rgb c)
{
    if (!img.contains(x, y)) return;
    if (img.channels() == 3) {
        img.at(x, y, 0) = c.r;
        img.at(x, y, 1) = c.g;
        img.at(x, y, 2) = c.b;
    } else {
        img.at(x, y) = quantize(0.299 * c.r + 0.587 * c.g + 0.114 * c.b);
    }
}

/// Fills pixels whose centers lie in [x0, x1) x [y0, y1).
inline void fill_rect(Raster& img, double x0, double y0, double x1, double y1, Rgb c)
{
    const int xa = std::max(0, static_cast<int>(std::ceil(x0 - 0.5)));
    const int xb = std::min(img.width(), static_cast<int>(std::ceil(x1 - 0.5)));
    const int ya = std::max(0, static_cast<int>(std::ceil(y0 - 0.5)));
    const int yb = std::min(img.height(), static_cast<int>(std::ceil(y1 - 0.5)));
    for (int y = ya; y < yb; ++y)
        for (int x = xa; x < xb; ++x) put_pixel(img, x, y, c);
}

struct Point2 {
    double x = 0, y = 0;
};

/// Scanline fill of a convex polygon, sampling at pixel centers.
inline void fill_convex(Raster& img, std::span<const Point2> poly, Rgb c)
{
    if (poly.size() < 3) return;
    double ymin = poly[0].y, ymax = poly[0].y;
    for (const auto& p : poly) {
        ymin = std::min(ymin, p.y);
        ymax = std::max(ymax, p.y);
    }
    const int ya = std::max(0, static_cast<int>(std::ceil(ymin)));
    const int yb = std::min(img.height() - 1, static_cast<int>(std::floor(ymax)));
    for (int y = ya; y <= yb; ++y) {
        double lo = 1e300, hi = -1e300;
        for (std::size_t i = 0; i < poly.size(); ++i) {
            const Point2 a = poly[i];
            const Point2 b = poly[(i + 1) % poly.size()];
            if ((a.y <= y && b.y >= y) || (b.y <= y && a.y >= y)) {
                if (a.y == b.y) {
                    lo = std::min({lo, a.x, b.x});
                    hi = std::max({hi, a.x, b.x});
                } else {
                    const double x = a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y);
                    lo = std::min(lo, x);
                    hi = std::max(hi, x);
                }
            }
        }
        if (lo > hi) continue;
        const int xa = std::max(0, static_cast<int>(std::ceil(lo)));
        const int xb = std::min(img.width() - 1, static_cast<int>(std::floor(hi)));
        for (int x = xa; x <= xb; ++x) put_pixel(img, x, y, c);
    }
}

inline void draw_line(Raster& img, Point2 a, Point2 b, double thickness, Rgb c)
{
    const double dx = b.x - a.x;
    const double dy = b.y - a.y;
    const double len = std::hypot(dx, dy);
    if (len == 0.0) {
        fill_rect(img, a.x - thickness / 2, a.y - thickness / 2, a.x + thickness / 2,
                  a.y + thickness / 2, c);
        return;
    }
    const double nx = -dy / len * thickness / 2;
    const double ny = dx / len * thickness / 2;
    const std::array<Point2, 4> quad{{{a.x + nx, a.y + ny},
                                      {b.x + nx, b.y + ny},
                                      {b.x - nx, b.y - ny},
                                      {a.x - nx, a.y - ny}}};
    fill_convex(img, quad, c);
}

namespace detail {

// Segment bits: a b c d e f g (top, upper-right, lower-right, bottom, lower-left, upper-left, middle).
inline unsigned seven_segment_bits(char ch)
{
    switch (ch) {
    case '0': return 0b1111110;
    case '1': return 0b0110000;
    case '2': return 0b1101101;
    case '3': return 0b1111001;
    case '4': return 0b0110011;
    case '5': return 0b1011011;
    case '6': return 0b1011111;
    case '7': return 0b1110000;
    case '8': return 0b1111111;
    case '9': return 0b1111011;
    case '-': return 0b0000001;
    default: return 0;
    }
}

}  // namespace detail

/// One glyph in a cell of size w x h at top-left (x, y) with stroke t.
inline void draw_glyph(Raster& img, char ch, double x, double y, double w, double h, double t, Rgb c)
{
    if (ch == '.') {
        fill_rect(img, x + w / 2 - t / 2, y + h - t, x + w / 2 + t / 2, y + h, c);
        return;
    }
    const unsigned bits = detail::seven_segment_bits(ch);
    const double mid = y + h / 2;
    auto on = [&](int seg) { return (bits >> (6 - seg)) & 1u; };
    if (on(0)) fill_rect(img, x, y, x + w, y + t, c);
    if (on(1)) fill_rect(img, x + w - t, y, x + w, mid + t / 2, c);
    if (on(2)) fill_rect(img, x + w - t, mid - t / 2, x + w, y + h, c);
    if (on(3)) fill_rect(img, x, y + h - t, x + w, y + h, c);
    if (on(4)) fill_rect(img, x, mid - t / 2, x + t, y + h, c);
    if (on(5)) fill_rect(img, x, y, x + t, mid + t / 2, c);
    if (on(6)) fill_rect(img, x, mid - t / 2, x + w, mid + t / 2, c);
}

/// Glyph advance is 1.3 cell widths ('.' is half).
inline void draw_text(Raster& img, std::string_view text, double x, double y, double w, double h,
                      double t, Rgb c)
{
    for (char ch : text) {
        draw_glyph(img, ch, x, y, w, h, t, c);
        x += (ch == '.' ? 0.6 : 1.3) * w;
    }
}

inline Raster to_rgb(const Raster& img)
{
    if (img.channels() == 3) return img;
    Raster out(img.width(), img.height(), 3);
    auto src = img.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[3 * i] = dst[3 * i + 1] = dst[3 * i + 2] = src[i];
    return out;
}

}  // namespace gauge
