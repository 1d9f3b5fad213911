#pragma once

// Coarse-to-fine waterline localization on an upright plate region.
//
// Coarse: per-row sum of Canny edge magnitudes over the plate columns,
// 5-row moving average, then the row with the largest drop in windowed mean
// edge energy (tick marks above, flat water below).
// Fine: strongest summed |Sobel-y| within +-5 rows of the coarse row.
// Confidence: normalized contrast between edge densities above and below.

#include "gaugeread/draw.hpp"
#include "gaugeread/filters.hpp"

#include <cstdio>
#include <span>
#include <stdexcept>
#include <vector>

namespace gauge {

inline constexpr int kFineRadiusRows = 5;

struct WaterlineParams {
    CannyParams canny{};
    int window_rows = 15;  // w of the coarse windowed difference
    int smooth_rows = 5;
    int confidence_rows = 30;
    int guard_rows = 3;  // rows next to the line excluded from the densities
    double threshold = 0.20;
};

struct WaterlineResult {
    int row = 0;
    int coarse_row = 0;
    double confidence = 0.0;
    bool accepted = false;
};

inline ColumnRange full_width(const Raster& img) { return {0, img.width()}; }

inline void check_columns(const Raster& img, ColumnRange cols, const char* who)
{
    if (cols.empty() || cols.begin < 0 || cols.end > img.width()) {
        throw std::invalid_argument(std::string(who) + ": plate columns empty or outside the image");
    }
}

/// Centered moving average; windows are truncated at the ends.
inline std::vector<double> moving_average(std::span<const double> v, int len)
{
    const int n = static_cast<int>(v.size());
    const int half = len / 2;
    std::vector<double> out(v.size());
    for (int i = 0; i < n; ++i) {
        const int a = std::max(0, i - half);
        const int b = std::min(n - 1, i + half);
        double s = 0.0;
        for (int j = a; j <= b; ++j) s += v[j];
        out[i] = s / (b - a + 1);
    }
    return out;
}

/// argmax_r mean(P[r-w, r)) - mean(P[r, r+w]) over the smoothed profile;
/// ties go to the smallest r.
inline int coarse_row_from_profile(std::span<const double> profile, int window = 15, int smooth = 5)
{
    const int n = static_cast<int>(profile.size());
    if (window < 1 || n < 2 * window + 1) {
        throw std::invalid_argument("coarse_row: image shorter than twice the search window");
    }
    const auto p = moving_average(profile, smooth);
    std::vector<double> prefix(n + 1, 0.0);
    for (int i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + p[i];
    int best_r = window;
    double best = -1e300;
    for (int r = window; r + window <= n - 1; ++r) {
        const double above = (prefix[r] - prefix[r - window]) / window;
        const double below = (prefix[r + window + 1] - prefix[r]) / (window + 1);
        const double d = above - below;
        if (d > best) {
            best = d;
            best_r = r;
        }
    }
    return best_r;
}

/// Per-row sum of gradient magnitude at Canny edge pixels within `cols`.
inline std::vector<double> edge_energy_profile(const CannyResult& c, ColumnRange cols)
{
    std::vector<double> prof(c.edges.height(), 0.0);
    for (int y = 0; y < c.edges.height(); ++y) {
        double s = 0.0;
        for (int x = cols.begin; x < cols.end; ++x) {
            if (c.edges.at(x, y)) s += c.gradient.magnitude[c.gradient.index(x, y)];
        }
        prof[y] = s;
    }
    return prof;
}

inline int coarse_row(const CannyResult& c, ColumnRange cols, const WaterlineParams& p = {})
{
    check_columns(c.edges, cols, "coarse_row");
    const auto prof = edge_energy_profile(c, cols);
    return coarse_row_from_profile(prof, p.window_rows, p.smooth_rows);
}

inline int coarse_row(const Raster& gray, ColumnRange cols, const WaterlineParams& p = {})
{
    require_gray(gray, "coarse_row");
    return coarse_row(canny(gray, p.canny), cols, p);
}

/// Row in [coarse-5, coarse+5] maximizing sum |gy| over cols. Ties: nearest
/// to coarse, then the smaller row.
inline int fine_row(const Raster& gray, int coarse, ColumnRange cols)
{
    require_gray(gray, "fine_row");
    check_columns(gray, cols, "fine_row");
    if (coarse - kFineRadiusRows < 0 || coarse + kFineRadiusRows >= gray.height()) {
        throw std::invalid_argument("fine_row: search window outside the image");
    }
    int best_row = coarse;
    double best = -1.0;
    for (int off = 0; off <= kFineRadiusRows; ++off) {
        for (int r : {coarse - off, coarse + off}) {
            double s = 0.0;
            for (int x = cols.begin; x < cols.end; ++x) {
                auto p = [&](int dx, int dy) { return static_cast<double>(gray.clamped(x + dx, r + dy)); };
                s += std::abs((p(-1, 1) + 2 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2 * p(0, -1) + p(1, -1)));
            }
            if (s > best) {
                best = s;
                best_row = r;
            }
            if (off == 0) break;
        }
    }
    return best_row;
}

inline double edge_density(const Raster& edges, int row_begin, int row_end, ColumnRange cols)
{
    row_begin = std::max(row_begin, 0);
    row_end = std::min(row_end, edges.height());
    if (row_end <= row_begin || cols.empty()) return 0.0;
    std::size_t on = 0;
    for (int y = row_begin; y < row_end; ++y)
        for (int x = cols.begin; x < cols.end; ++x) on += edges.at(x, y) ? 1 : 0;
    return static_cast<double>(on) / (static_cast<double>(row_end - row_begin) * cols.size());
}

inline double waterline_confidence(const Raster& edges, int row, ColumnRange cols,
                                   const WaterlineParams& p = {})
{
    check_columns(edges, cols, "waterline_confidence");
    constexpr double eps = 1e-6;
    const double above = edge_density(edges, row - p.guard_rows - p.confidence_rows, row - p.guard_rows, cols);
    const double below =
        edge_density(edges, row + p.guard_rows + 1, row + p.guard_rows + 1 + p.confidence_rows, cols);
    return std::max(0.0, above - below) / (above + below + eps);
}

inline WaterlineResult detect_waterline(const Raster& gray, ColumnRange cols, const WaterlineParams& p = {})
{
    require_gray(gray, "detect_waterline");
    if (!(p.threshold >= 0.0 && p.threshold <= 1.0)) {
        throw std::invalid_argument("detect_waterline: threshold must be in [0,1]");
    }
    const CannyResult c = canny(gray, p.canny);
    WaterlineResult r;
    r.coarse_row = coarse_row(c, cols, p);
    r.row = fine_row(gray, r.coarse_row, cols);
    r.confidence = waterline_confidence(c.edges, r.row, cols, p);
    r.accepted = r.confidence >= p.threshold;
    return r;
}

/// Debug overlay: red waterline, green confidence text.
inline Raster waterline_overlay(const Raster& img, const WaterlineResult& r)
{
    Raster out = to_rgb(img);
    fill_rect(out, 0, r.row - 0.5, out.width(), r.row + 1.5, Rgb{230, 20, 20});
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.2f", r.confidence);
    const double top = r.row > 24 ? r.row - 22.0 : r.row + 6.0;
    draw_text(out, buf, 6, top, 9, 16, 2, Rgb{20, 220, 20});
    return out;
}

}  // namespace gauge
