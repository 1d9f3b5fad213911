#pragma once

// Pixel-to-centimeter calibration from major scale keypoints.
//
//   D_m = median of consecutive keypoint row gaps
//   D_n = waterline row - anchor row (nearest major mark at or above the water)
//   R   = D_n / D_m
//   W   = M - 10 R           (M: value of the anchor mark, 10 cm per interval)
//
// Rows grow downward and plate values grow upward, hence the subtraction.

#include "gaugeread/stats.hpp"
#include "gaugeread/waterline.hpp"

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gauge {

inline constexpr double kMajorIntervalCm = 10.0;
inline constexpr double kGapTolerance = 0.05;

class CalibrationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ScaleKeypoint {
    double row = 0;
    double col = 0;
    std::optional<double> value_cm;
    double confidence = 1.0;
};

struct PixelBox {
    double x = 0, y = 0, width = 0, height = 0;

    double right() const noexcept { return x + width; }
    double bottom() const noexcept { return y + height; }
};

struct PlateDetection {
    PixelBox bbox;
    std::vector<ScaleKeypoint> keypoints;  // strictly ascending rows
    double plate_height_px = 0;

    void validate() const
    {
        for (std::size_t i = 1; i < keypoints.size(); ++i) {
            if (!(keypoints[i].row > keypoints[i - 1].row)) {
                throw CalibrationError("PlateDetection: keypoint rows must be strictly ascending");
            }
        }
    }

    /// Plate columns clamped to an image of the given width.
    ColumnRange columns(int image_width) const
    {
        const int a = std::clamp(static_cast<int>(std::ceil(bbox.x)), 0, image_width);
        const int b = std::clamp(static_cast<int>(std::floor(bbox.right())), 0, image_width);
        return {a, b};
    }
};

/// Pixel quantities; available without knowing any numeral value.
struct ScaleGeometry {
    double d_m = 0;
    double d_n = 0;
    double ratio = 0;
    double anchor_row = 0;
    std::size_t anchor_index = 0;
    double plate_height_px = 0;
};

struct ScaleCalibration {
    double d_m = 0;
    double d_n = 0;
    double ratio = 0;
    double major_reading_cm = 0;
    double reading_cm = 0;
};

inline double major_gap(std::span<const double> rows)
{
    if (rows.size() < 2) throw CalibrationError("major_gap: need at least two keypoints");
    std::vector<double> diffs;
    diffs.reserve(rows.size() - 1);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (!(rows[i] > rows[i - 1])) throw CalibrationError("major_gap: keypoint rows not strictly increasing");
        diffs.push_back(rows[i] - rows[i - 1]);
    }
    return median(std::move(diffs));
}

inline double waterline_gap(double waterline_row, double anchor_row)
{
    if (waterline_row < anchor_row) {
        throw CalibrationError("waterline_gap: waterline above its anchor mark");
    }
    return waterline_row - anchor_row;
}

/// R = d_n / d_m; overshoot up to `tol` beyond a full interval is clamped to 1.
inline double gap_ratio(double d_n, double d_m, double tol = kGapTolerance)
{
    if (!(d_m > 0.0)) throw CalibrationError("gap_ratio: major gap must be > 0");
    if (!(d_n >= 0.0) || d_n > d_m * (1.0 + tol)) {
        throw CalibrationError("gap_ratio: waterline gap outside [0, d_m(1+tol)]");
    }
    return std::min(d_n / d_m, 1.0);
}

inline double compute_reading(double major_reading_cm, double ratio)
{
    if (!(ratio >= 0.0 && ratio <= 1.0)) throw CalibrationError("compute_reading: ratio outside [0,1]");
    return major_reading_cm - ratio * kMajorIntervalCm;
}

inline ScaleGeometry measure_geometry(const PlateDetection& det, double waterline_row)
{
    det.validate();
    std::vector<double> rows;
    rows.reserve(det.keypoints.size());
    for (const auto& k : det.keypoints) rows.push_back(k.row);
    ScaleGeometry g;
    g.d_m = major_gap(rows);
    bool found = false;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] <= waterline_row) {
            g.anchor_index = i;
            found = true;
        }
    }
    if (!found) throw CalibrationError("calibrate: no anchor keypoint at or above the waterline");
    g.anchor_row = rows[g.anchor_index];
    g.d_n = waterline_gap(waterline_row, g.anchor_row);
    g.ratio = gap_ratio(g.d_n, g.d_m);
    g.plate_height_px = det.plate_height_px;
    return g;
}

inline ScaleCalibration calibrate(const PlateDetection& det, double waterline_row)
{
    const ScaleGeometry g = measure_geometry(det, waterline_row);
    const auto& value = det.keypoints[g.anchor_index].value_cm;
    if (!value) throw CalibrationError("calibrate: anchor numeral value unknown");
    return {g.d_m, g.d_n, g.ratio, *value, compute_reading(*value, g.ratio)};
}

inline ScaleCalibration calibrate(const PlateDetection& det, const WaterlineResult& wl)
{
    if (!wl.accepted) throw CalibrationError("calibrate: waterline rejected");
    return calibrate(det, static_cast<double>(wl.row));
}

}  // namespace gauge
