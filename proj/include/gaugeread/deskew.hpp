#pragma once

// Angular correction. Long near-vertical structure (plate sides, tick columns)
// is found as |Sobel-x| edges -> probabilistic Hough segments; the skew is the
// 80th percentile of the signed deviations from vertical, gated by their mean
// absolute value.

#include "gaugeread/draw.hpp"
#include "gaugeread/filters.hpp"
#include "gaugeread/stats.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

namespace gauge {

struct LineSegment {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
    double length = 0;
    double theta_deg = 0;  // from the horizontal axis, in (-90, 90]

    static LineSegment from_endpoints(double x1, double y1, double x2, double y2)
    {
        LineSegment s{x1, y1, x2, y2, std::hypot(x2 - x1, y2 - y1), 0.0};
        double t = std::atan2(y2 - y1, x2 - x1) * 180.0 / std::numbers::pi;
        if (t > 90.0) t -= 180.0;
        if (t <= -90.0) t += 180.0;
        s.theta_deg = t;
        return s;
    }
};

/// Signed deviation from vertical. Positive means the top leans left, which is
/// what a counterclockwise rotation of an upright line produces.
inline double deviation_from_vertical(double theta_deg) noexcept
{
    return theta_deg > 0.0 ? 90.0 - theta_deg : -90.0 - theta_deg;
}

struct HoughParams {
    double rho_px = 1.0;
    double theta_step_deg = 1.0;
    int vote_threshold = 60;
    int max_gap_px = 10;
    double suppress_px = 5.0;  // corridor cleared around an accepted segment
    int walk_tolerance_px = 2;  // perpendicular slack when tracing; a fitted axis can fall between two edges
    std::uint64_t seed = 0x5eedu;
};

struct DeskewParams {
    double edge_threshold = 120.0;  // on |gx|
    double min_len = 150.0;
    double gate_deg = 1.0;
    double max_deviation_deg = 45.0;
    HoughParams hough;
};

struct SkewEstimate {
    int qualifying_segments = 0;
    double p80_abs_dev_deg = 0.0;  // signed 80th percentile of deviations
    double mean_abs_dev_deg = 0.0;
    double rotation_deg = 0.0;
};

namespace detail {

struct EdgeMap {
    int width = 0, height = 0;
    std::vector<std::uint8_t> on;
    bool at(int x, int y) const
    {
        return x >= 0 && y >= 0 && x < width && y < height && on[static_cast<std::size_t>(y) * width + x];
    }
};

struct LineFit {
    double cx = 0, cy = 0;  // centroid
    double dx = 0, dy = 1;  // unit direction
};

inline LineFit fit_line(const std::vector<int>& pts, int width)
{
    LineFit f;
    if (pts.empty()) return f;
    double sx = 0, sy = 0;
    for (int p : pts) {
        sx += p % width;
        sy += p / width;
    }
    f.cx = sx / static_cast<double>(pts.size());
    f.cy = sy / static_cast<double>(pts.size());
    double sxx = 0, syy = 0, sxy = 0;
    for (int p : pts) {
        const double ux = p % width - f.cx;
        const double uy = p / width - f.cy;
        sxx += ux * ux;
        syy += uy * uy;
        sxy += ux * uy;
    }
    // Principal axis of the 2x2 scatter matrix.
    const double angle = 0.5 * std::atan2(2.0 * sxy, sxx - syy);
    f.dx = std::cos(angle);
    f.dy = std::sin(angle);
    return f;
}

// Extent [tmin, tmax] of edge hits walking from (ox, oy) along (dx, dy),
// tolerating up to max_gap consecutive misses. A step hits when any pixel
// within `tol` of the axis is on.
inline std::pair<double, double> walk(const EdgeMap& m, double ox, double oy, double dx, double dy,
                                      int max_gap, int tol)
{
    const double step = 1.0 / std::max(std::abs(dx), std::abs(dy));
    double ext[2] = {0.0, 0.0};
    for (int dir = 0; dir < 2; ++dir) {
        const double sgn = dir == 0 ? 1.0 : -1.0;
        int gap = 0;
        for (int k = 1;; ++k) {
            const double t = sgn * k * step;
            const double cx = ox + t * dx, cy = oy + t * dy;
            if (cx < -0.5 || cy < -0.5 || cx > m.width - 0.5 || cy > m.height - 0.5) break;
            bool hit = false;
            for (int o = -tol; o <= tol && !hit; ++o) {
                hit = m.at(static_cast<int>(std::lround(cx - o * dy)), static_cast<int>(std::lround(cy + o * dx)));
            }
            if (hit) {
                gap = 0;
                ext[dir] = t;
            } else if (++gap > max_gap) {
                break;
            }
        }
    }
    return {ext[1], ext[0]};
}

// Edge pixels within `radius` of the line and inside the padded extent.
inline std::vector<int> corridor(const EdgeMap& m, double ox, double oy, double dx, double dy,
                                 double tmin, double tmax, double radius)
{
    std::vector<int> pts;
    const double ax = ox + (tmin - radius) * dx, ay = oy + (tmin - radius) * dy;
    const double bx = ox + (tmax + radius) * dx, by = oy + (tmax + radius) * dy;
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min(ax, bx) - radius)));
    const int x1 = std::min(m.width - 1, static_cast<int>(std::ceil(std::max(ax, bx) + radius)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min(ay, by) - radius)));
    const int y1 = std::min(m.height - 1, static_cast<int>(std::ceil(std::max(ay, by) + radius)));
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            if (!m.at(x, y)) continue;
            const double ux = x - ox, uy = y - oy;
            const double t = ux * dx + uy * dy;
            const double perp = std::abs(-ux * dy + uy * dx);
            if (perp <= radius && t >= tmin - radius && t <= tmax + radius) pts.push_back(y * m.width + x);
        }
    }
    return pts;
}

}  // namespace detail

/// Probabilistic Hough over the thresholded |gx| map. Candidate lines are
/// refined by a total-least-squares fit over the edge corridor, which removes
/// the angular quantization of the accumulator. Only segments strictly longer
/// than min_len are returned.
inline std::vector<LineSegment> detect_segments(const Raster& gray, double min_len,
                                                const DeskewParams& params = {})
{
    require_gray(gray, "detect_segments");
    if (!(min_len >= 1.0)) throw std::invalid_argument("detect_segments: min_len must be >= 1");
    const auto& hp = params.hough;
    const GradientField g = sobel_gradients(gray);
    const int w = g.width;
    const int h = g.height;

    detail::EdgeMap m{w, h, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h, 0)};
    std::vector<int> points;
    for (std::size_t i = 0; i < m.on.size(); ++i) {
        if (std::abs(g.gx[i]) >= params.edge_threshold) {
            m.on[i] = 1;
            points.push_back(static_cast<int>(i));
        }
    }
    std::vector<LineSegment> out;
    if (points.empty()) return out;

    std::mt19937_64 rng(hp.seed);
    std::shuffle(points.begin(), points.end(), rng);

    const int num_angle = std::max(1, static_cast<int>(std::lround(180.0 / hp.theta_step_deg)));
    const double diag = std::hypot(w, h);
    const int rho_offset = static_cast<int>(std::ceil(diag / hp.rho_px));
    const int num_rho = 2 * rho_offset + 1;
    std::vector<double> cos_t(num_angle), sin_t(num_angle);
    for (int n = 0; n < num_angle; ++n) {
        const double a = n * hp.theta_step_deg * std::numbers::pi / 180.0;
        cos_t[n] = std::cos(a) / hp.rho_px;
        sin_t[n] = std::sin(a) / hp.rho_px;
    }
    std::vector<int> acc(static_cast<std::size_t>(num_angle) * num_rho, 0);
    std::vector<std::uint8_t> voted(m.on.size(), 0);
    auto rho_index = [&](int x, int y, int n) {
        return static_cast<std::size_t>(n) * num_rho +
               static_cast<std::size_t>(std::lround(x * cos_t[n] + y * sin_t[n]) + rho_offset);
    };

    for (int p : points) {
        if (!m.on[p]) continue;
        const int px = p % w;
        const int py = p / w;
        int best_votes = 0;
        int best_n = 0;
        for (int n = 0; n < num_angle; ++n) {
            const int v = ++acc[rho_index(px, py, n)];
            if (v > best_votes) {
                best_votes = v;
                best_n = n;
            }
        }
        voted[p] = 1;
        if (best_votes < hp.vote_threshold) continue;

        // Line direction is perpendicular to the accumulator normal.
        const double a = best_n * hp.theta_step_deg * std::numbers::pi / 180.0;
        double ox = px, oy = py, dx = -std::sin(a), dy = std::cos(a);
        std::vector<int> band;
        double tmin = 0, tmax = 0;
        for (int iter = 0; iter < 3; ++iter) {
            std::tie(tmin, tmax) = detail::walk(m, ox, oy, dx, dy, hp.max_gap_px, hp.walk_tolerance_px);
            if (tmax - tmin < min_len * 0.5) break;
            band = detail::corridor(m, ox, oy, dx, dy, tmin, tmax, hp.suppress_px);
            const auto fit = detail::fit_line(band, w);
            ox = fit.cx;
            oy = fit.cy;
            dx = fit.dx;
            dy = fit.dy;
        }
        if (band.empty() || tmax - tmin < min_len * 0.5) continue;

        // Endpoints from the extreme corridor pixels projected on the fitted line.
        band = detail::corridor(m, ox, oy, dx, dy, tmin, tmax, hp.suppress_px);
        double lo = 1e300, hi = -1e300;
        for (int q : band) {
            const double t = (q % w - ox) * dx + (q / w - oy) * dy;
            lo = std::min(lo, t);
            hi = std::max(hi, t);
        }
        const auto seg = LineSegment::from_endpoints(ox + lo * dx, oy + lo * dy, ox + hi * dx, oy + hi * dy);
        if (!(seg.length > min_len)) continue;

        for (int q : band) {
            m.on[q] = 0;
            if (voted[q]) {
                for (int n = 0; n < num_angle; ++n) --acc[rho_index(q % w, q / w, n)];
                voted[q] = 0;
            }
        }
        out.push_back(seg);
    }
    return out;
}

inline SkewEstimate estimate_skew(const std::vector<LineSegment>& segments, double gate_deg = 1.0,
                                  double max_deviation_deg = 45.0)
{
    std::vector<double> dev;
    for (const auto& s : segments) {
        const double d = deviation_from_vertical(s.theta_deg);
        if (std::abs(d) <= max_deviation_deg) dev.push_back(d);
    }
    SkewEstimate e;
    e.qualifying_segments = static_cast<int>(dev.size());
    if (dev.empty()) return e;
    e.p80_abs_dev_deg = percentile(dev, 0.8);
    double abs_sum = 0.0;
    for (double d : dev) abs_sum += std::abs(d);
    e.mean_abs_dev_deg = abs_sum / static_cast<double>(dev.size());
    if (e.mean_abs_dev_deg >= gate_deg) e.rotation_deg = -e.p80_abs_dev_deg;
    // +0.0 rather than -0.0 keeps serialized output stable.
    if (e.rotation_deg == 0.0) e.rotation_deg = 0.0;
    return e;
}

/// Counterclockwise rotation about the image center, bilinear, same canvas,
/// out-of-frame samples edge-replicated.
inline Raster rotate_image(const Raster& img, double angle_deg)
{
    if (img.empty()) throw std::invalid_argument("rotate_image: empty raster");
    if (!(std::abs(angle_deg) <= 45.0)) throw std::invalid_argument("rotate_image: |angle| must be <= 45");
    if (angle_deg == 0.0) return img;
    const double a = angle_deg * std::numbers::pi / 180.0;
    const double ca = std::cos(a), sa = std::sin(a);
    const double cx = (img.width() - 1) / 2.0;
    const double cy = (img.height() - 1) / 2.0;
    Raster out(img.width(), img.height(), img.channels());
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            const double ux = x - cx, uy = y - cy;
            const double sx = cx + ux * ca - uy * sa;
            const double sy = cy + ux * sa + uy * ca;
            const int x0 = static_cast<int>(std::floor(sx));
            const int y0 = static_cast<int>(std::floor(sy));
            const double fx = sx - x0, fy = sy - y0;
            for (int c = 0; c < img.channels(); ++c) {
                const double top = (1 - fx) * img.clamped(x0, y0, c) + fx * img.clamped(x0 + 1, y0, c);
                const double bot = (1 - fx) * img.clamped(x0, y0 + 1, c) + fx * img.clamped(x0 + 1, y0 + 1, c);
                out.at(x, y, c) = quantize((1 - fy) * top + fy * bot);
            }
        }
    }
    return out;
}

struct DeskewResult {
    std::vector<LineSegment> segments;
    SkewEstimate estimate;
    Raster upright;
};

inline DeskewResult deskew(const Raster& gray, const DeskewParams& params = {})
{
    DeskewResult r;
    r.segments = detect_segments(gray, params.min_len, params);
    r.estimate = estimate_skew(r.segments, params.gate_deg, params.max_deviation_deg);
    r.upright = rotate_image(gray, r.estimate.rotation_deg);
    return r;
}

/// Debug overlay: detected segments in yellow over the input.
inline Raster segment_overlay(const Raster& img, const std::vector<LineSegment>& segments)
{
    Raster out = to_rgb(img);
    for (const auto& s : segments) draw_line(out, {s.x1, s.y1}, {s.x2, s.y2}, 2.0, Rgb{255, 220, 0});
    return out;
}

}  // namespace gauge
