#pragma once

// Plate keypoint detectors behind one interface.
//
// FileDetector serves detections from the interchange JSON
//   { "<image id>": { "bbox": [x, y, w, h],
//                     "keypoints": [ {"row", "col", "value_cm" | null, "conf"} ],
//                     "plate_height_px": H } }
// so external detectors plug in without linking. ClassicalDetector locates the
// plate and its major bars directly; it cannot read numerals, so its keypoints
// carry no values and only the scale geometry is available downstream.

#include "gaugeread/filters.hpp"
#include "gaugeread/image_io.hpp"
#include "gaugeread/scale_calib.hpp"

#include "json.hpp"

#include <map>
#include <memory>
#include <string>
#include <vector>

namespace gauge {

class KeypointDetector {
public:
    virtual ~KeypointDetector() = default;
    virtual std::string name() const = 0;
    /// `upright` is the deskewed grayscale image. Must be safe to call concurrently.
    virtual PlateDetection detect(const std::string& image_id, const Raster& upright) const = 0;
};

inline nlohmann::json to_json(const PlateDetection& d)
{
    nlohmann::json kps = nlohmann::json::array();
    for (const auto& k : d.keypoints) {
        nlohmann::json v = k.value_cm ? nlohmann::json(*k.value_cm) : nlohmann::json(nullptr);
        kps.push_back({{"row", k.row}, {"col", k.col}, {"value_cm", v}, {"conf", k.confidence}});
    }
    return {{"bbox", {d.bbox.x, d.bbox.y, d.bbox.width, d.bbox.height}},
            {"keypoints", kps},
            {"plate_height_px", d.plate_height_px}};
}

inline PlateDetection detection_from_json(const nlohmann::json& j)
{
    PlateDetection d;
    const auto& b = j.at("bbox");
    if (!b.is_array() || b.size() != 4) throw std::invalid_argument("detection: bbox must be [x, y, w, h]");
    d.bbox = {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>()};
    for (const auto& k : j.at("keypoints")) {
        ScaleKeypoint kp;
        kp.row = k.at("row").get<double>();
        kp.col = k.value("col", 0.0);
        if (k.contains("value_cm") && !k.at("value_cm").is_null()) kp.value_cm = k.at("value_cm").get<double>();
        kp.confidence = k.value("conf", 1.0);
        d.keypoints.push_back(kp);
    }
    d.plate_height_px = j.value("plate_height_px", d.bbox.height);
    d.validate();
    return d;
}

using DetectionMap = std::map<std::string, PlateDetection>;

inline DetectionMap read_detections(const std::filesystem::path& path)
{
    const auto bytes = read_file_bytes(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception& e) {
        throw ImageIoError("read_detections: " + path.string() + ": " + e.what());
    }
    if (!j.is_object()) throw ImageIoError("read_detections: top level must be an object keyed by image id");
    DetectionMap out;
    for (const auto& [id, v] : j.items()) out.emplace(id, detection_from_json(v));
    return out;
}

inline void write_detections(const std::filesystem::path& path, const DetectionMap& m)
{
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [id, d] : m) j[id] = to_json(d);
    const std::string s = j.dump(1) + "\n";
    write_file_bytes(path, std::vector<std::uint8_t>(s.begin(), s.end()));
}

class FileDetector final : public KeypointDetector {
public:
    explicit FileDetector(DetectionMap m) : map_(std::move(m)) {}
    explicit FileDetector(const std::filesystem::path& p) : map_(read_detections(p)) {}

    std::string name() const override { return "file"; }

    PlateDetection detect(const std::string& image_id, const Raster&) const override
    {
        const auto it = map_.find(image_id);
        if (it == map_.end()) throw CalibrationError("no detection for image '" + image_id + "'");
        return it->second;
    }

private:
    DetectionMap map_;
};

struct ClassicalParams {
    // Column band holding only the major bars, as fractions of plate width.
    double bar_band_begin = 0.42;
    double bar_band_end = 0.47;
    double numeral_band_begin = 0.53;
    double numeral_band_end = 0.95;
    double bar_fill = 0.4;  // fraction of the peak darkness marking a bar row
    int min_interval_px = 12;
};

/// Largest 8-connected component of nonzero pixels, as a pixel box.
inline PixelBox largest_component(const Raster& binary)
{
    require_gray(binary, "largest_component");
    const int w = binary.width();
    const int h = binary.height();
    std::vector<std::uint8_t> seen(static_cast<std::size_t>(w) * h, 0);
    std::vector<std::pair<int, int>> stack;
    std::size_t best_n = 0;
    PixelBox best{};
    for (int y0 = 0; y0 < h; ++y0) {
        for (int x0 = 0; x0 < w; ++x0) {
            const std::size_t i0 = static_cast<std::size_t>(y0) * w + x0;
            if (!binary.at(x0, y0) || seen[i0]) continue;
            seen[i0] = 1;
            stack.assign(1, {x0, y0});
            std::size_t n = 0;
            int xa = x0, xb = x0, ya = y0, yb = y0;
            while (!stack.empty()) {
                const auto [x, y] = stack.back();
                stack.pop_back();
                ++n;
                xa = std::min(xa, x);
                xb = std::max(xb, x);
                ya = std::min(ya, y);
                yb = std::max(yb, y);
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = x + dx, ny = y + dy;
                        if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
                        const std::size_t j = static_cast<std::size_t>(ny) * w + nx;
                        if (seen[j] || !binary.at(nx, ny)) continue;
                        seen[j] = 1;
                        stack.push_back({nx, ny});
                    }
                }
            }
            if (n > best_n) {
                best_n = n;
                best = {static_cast<double>(xa), static_cast<double>(ya), static_cast<double>(xb - xa + 1),
                        static_cast<double>(yb - ya + 1)};
            }
        }
    }
    if (best_n == 0) throw CalibrationError("largest_component: no foreground");
    return best;
}

/// Lag in [min_lag, n/2] maximizing the biased, mean-removed autocorrelation;
/// the bias favors the fundamental over its multiples.
inline int autocorrelation_period(std::span<const double> p, int min_lag)
{
    const int n = static_cast<int>(p.size());
    if (n < 2 * min_lag + 2) throw CalibrationError("autocorrelation_period: profile too short");
    const double mu = mean(std::vector<double>(p.begin(), p.end()));
    int best_lag = min_lag;
    double best = -1e300;
    for (int lag = min_lag; lag <= n / 2; ++lag) {
        double s = 0.0;
        for (int i = 0; i + lag < n; ++i) s += (p[i] - mu) * (p[i + lag] - mu);
        if (s > best) {
            best = s;
            best_lag = lag;
        }
    }
    return best_lag;
}

class ClassicalDetector final : public KeypointDetector {
public:
    explicit ClassicalDetector(ClassicalParams p = {}) : p_(p) {}

    std::string name() const override { return "classical"; }

    PlateDetection detect(const std::string&, const Raster& upright) const override
    {
        const Raster gray = ensure_gray(upright);
        // Water is darkest; a second Otsu pass over the brighter class
        // separates the plate from bank and ink.
        const int t_water = otsu_level(histogram(gray));
        auto hist = histogram(gray);
        for (int v = 0; v <= t_water; ++v) hist[v] = 0;
        const int t_plate = otsu_level(hist);
        Raster plate(gray.width(), gray.height(), 1);
        for (std::size_t i = 0; i < plate.data().size(); ++i) plate.data()[i] = gray.data()[i] > t_plate ? 255 : 0;
        const PixelBox box = largest_component(plate);

        const int ya = static_cast<int>(box.y);
        const int yb = static_cast<int>(box.bottom());
        auto band = [&](double a, double b) {
            const int xa = static_cast<int>(std::floor(box.x + a * box.width));
            const int xb = std::max(xa + 1, static_cast<int>(std::ceil(box.x + b * box.width)));
            return ColumnRange{std::clamp(xa, 0, gray.width()), std::clamp(xb, 0, gray.width())};
        };
        const ColumnRange bars = band(p_.bar_band_begin, p_.bar_band_end);
        const ColumnRange digits = band(p_.numeral_band_begin, p_.numeral_band_end);

        auto dark_fraction = [&](int y, ColumnRange c) {
            if (c.empty()) return 0.0;
            int d = 0;
            for (int x = c.begin; x < c.end; ++x) d += gray.at(x, y) <= t_plate ? 1 : 0;
            return static_cast<double>(d) / c.size();
        };
        // Bar darkness relative to the plate level; thin bars blur to gray,
        // so a fixed threshold would miss them.
        std::vector<double> means;
        for (int y = ya; y < yb; ++y) {
            double s = 0.0;
            for (int x = bars.begin; x < bars.end; ++x) s += gray.at(x, y);
            means.push_back(bars.empty() ? 0.0 : s / bars.size());
        }
        const double level = median(means);
        std::vector<double> profile;
        for (double m : means) profile.push_back(std::max(0.0, level - m));
        const double peak = *std::max_element(profile.begin(), profile.end());
        if (!(peak > 0.0)) throw CalibrationError("classical detector: no major bars found");
        const double cut = p_.bar_fill * peak;

        // Bar rows come in short runs; their centroids are the keypoints.
        std::vector<double> centroids;
        for (int i = 0; i < static_cast<int>(profile.size());) {
            if (profile[i] < cut) {
                ++i;
                continue;
            }
            int j = i;
            double wsum = 0.0, rsum = 0.0;
            while (j < static_cast<int>(profile.size()) && profile[j] >= cut) {
                wsum += profile[j];
                rsum += profile[j] * (ya + j);
                ++j;
            }
            // Runs touching the box ends are the blurred plate borders.
            if (i > 0 && j < static_cast<int>(profile.size())) centroids.push_back(rsum / wsum);
            i = j;
        }

        // Drop runs closer than half the dominant period to their predecessor.
        const int period = autocorrelation_period(profile, p_.min_interval_px);
        std::vector<double> rows;
        for (double c : centroids) {
            if (rows.empty() || c - rows.back() >= 0.5 * period) rows.push_back(c);
        }

        PlateDetection det;
        det.bbox = box;
        det.plate_height_px = box.height;
        for (double r : rows) {
            const int a = static_cast<int>(std::round(r));
            const int b = std::min(yb, a + period / 2);
            double ink = 0.0;
            for (int y = a; y < b; ++y) ink += dark_fraction(y, digits);
            const double conf = b > a ? std::clamp(4.0 * ink / (b - a), 0.0, 1.0) : 0.0;
            det.keypoints.push_back({r, 0.5 * (bars.begin + bars.end), std::nullopt, conf});
        }
        return det;
    }

private:
    ClassicalParams p_;
};

inline std::unique_ptr<KeypointDetector> make_detector(const std::string& kind,
                                                       const std::filesystem::path& detections_file = {})
{
    if (kind == "classical") return std::make_unique<ClassicalDetector>();
    if (kind == "file" || kind == "oracle") {
        if (detections_file.empty()) throw std::invalid_argument("detector '" + kind + "' needs a detections file");
        return std::make_unique<FileDetector>(detections_file);
    }
    throw std::invalid_argument("unknown detector backend: " + kind);
}

}  // namespace gauge
