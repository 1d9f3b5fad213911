#pragma once

// Parametric staff-gauge renderer with closed-form ground truth, image
// degradations, YOLO-style annotation export and the seeded train/test split.
//
// Plate template (upright frame, rows grow downward):
//   - white plate, 2 cm header above the top numeral mark
//   - one red triangle per centimeter, base on the left margin, longer every 5 cm
//   - a major bar at every multiple of 10 cm, centered on the mark row
//   - decimeter numeral to the right, starting 1 cm below its mark
//   - water (dark, low texture) below the waterline across the full width

#include "gaugeread/deskew.hpp"
#include "gaugeread/draw.hpp"
#include "gaugeread/filters.hpp"
#include "gaugeread/scale_calib.hpp"

#include "json.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace gauge {

inline constexpr double kPlateHeaderCm = 2.0;

enum class Quality { optimal, sub_optimal };

inline std::string to_string(Quality q) { return q == Quality::optimal ? "optimal" : "sub-optimal"; }

inline Quality quality_from_string(const std::string& s)
{
    if (s == "optimal") return Quality::optimal;
    if (s == "sub-optimal" || s == "sub_optimal" || s == "suboptimal") return Quality::sub_optimal;
    throw std::invalid_argument("unknown quality label: " + s);
}

struct GaugeSpec {
    int plate_height_cm = 100;
    int plate_width_px = 110;
    double px_per_cm = 5.0;
    double top_value_cm = 200.0;
    double waterline_cm = 150.0;
    double tilt_deg = 0.0;
    std::uint64_t seed = 1;
    int image_width = 360;
    int image_height = 900;
    std::optional<double> plate_left_px;  // default: centered
    std::optional<double> top_row_px;     // row of the top numeral mark; default: centered plate

    double plate_extent_px() const { return (plate_height_cm + kPlateHeaderCm) * px_per_cm; }
    double bottom_value_cm() const { return top_value_cm - plate_height_cm; }

    double top_row() const
    {
        if (top_row_px) return *top_row_px;
        return std::floor((image_height - plate_extent_px()) / 2.0) + kPlateHeaderCm * px_per_cm;
    }
    double plate_left() const
    {
        if (plate_left_px) return *plate_left_px;
        return std::floor((image_width - plate_width_px) / 2.0);
    }
    double row_of(double value_cm) const { return top_row() + (top_value_cm - value_cm) * px_per_cm; }

    void validate() const
    {
        auto fail = [](const std::string& m) { throw std::invalid_argument("GaugeSpec: " + m); };
        if (plate_height_cm <= 0 || plate_height_cm % 10 != 0) fail("plate_height_cm must be a positive multiple of 10");
        if (!(px_per_cm > 0.0)) fail("px_per_cm must be > 0");
        if (image_width < 1 || image_height < 1) fail("image dimensions must be >= 1");
        if (px_per_cm * plate_height_cm > image_height) fail("plate taller than the image");
        if (!(waterline_cm >= 0.0 && waterline_cm <= top_value_cm)) fail("waterline_cm outside [0, top_value_cm]");
        if (waterline_cm < bottom_value_cm()) fail("waterline below the plate bottom");
        if (std::fmod(top_value_cm, 10.0) != 0.0) fail("top_value_cm must be a multiple of 10");
        if (plate_width_px < 8 || plate_width_px > image_width) fail("plate_width_px out of range");
        const double top = top_row() - kPlateHeaderCm * px_per_cm;
        const double bottom = top_row() + plate_height_cm * px_per_cm;
        if (top < 0.0 || bottom > image_height) fail("plate does not fit inside the image");
        if (plate_left() < 0.0 || plate_left() + plate_width_px > image_width) fail("plate outside the image columns");
        if (!(std::abs(tilt_deg) <= 45.0)) fail("|tilt_deg| must be <= 45");
    }
};

struct OcclusionRect {
    double x = 0, y = 0, width = 0, height = 0;
};

struct Degradation {
    double blur_sigma = 0.0;
    double noise_sigma = 0.0;
    double brightness_shift = 0.0;
    double contrast_scale = 1.0;
    std::vector<OcclusionRect> occlusions;

    bool is_identity() const
    {
        return blur_sigma == 0.0 && noise_sigma == 0.0 && brightness_shift == 0.0 && contrast_scale == 1.0 &&
               occlusions.empty();
    }

    void validate() const
    {
        if (!(blur_sigma >= 0.0 && blur_sigma <= 20.0)) throw std::invalid_argument("Degradation: blur_sigma in [0,20]");
        if (!(noise_sigma >= 0.0 && noise_sigma <= 100.0)) throw std::invalid_argument("Degradation: noise_sigma in [0,100]");
        if (!(std::abs(brightness_shift) <= 255.0)) throw std::invalid_argument("Degradation: |brightness_shift| <= 255");
        if (!(contrast_scale > 0.0 && contrast_scale <= 4.0)) throw std::invalid_argument("Degradation: contrast_scale in (0,4]");
    }
};

inline Quality quality_of(const Degradation& d) { return d.is_identity() ? Quality::optimal : Quality::sub_optimal; }

struct MajorMark {
    double row = 0;
    double value_cm = 0;
};

struct GroundTruth {
    double waterline_row = 0;
    std::vector<MajorMark> major_marks;  // every mark on the plate, ascending rows
    double d_m_px = 0;
    double reading_cm = 0;
    Quality quality = Quality::optimal;
    PixelBox plate_box;  // visible plate: header top to the waterline
    int image_width = 0;
    int image_height = 0;
    double px_per_cm = 0;
    double tilt_deg = 0;
};

namespace palette {
inline constexpr Rgb plate{235, 235, 230};
inline constexpr Rgb ink{200, 30, 30};
inline constexpr Rgb bank{110, 120, 90};
inline constexpr Rgb water{25, 35, 45};
}  // namespace palette

inline GroundTruth ground_truth_for(const GaugeSpec& spec)
{
    spec.validate();
    GroundTruth gt;
    gt.waterline_row = spec.row_of(spec.waterline_cm);
    gt.d_m_px = kMajorIntervalCm * spec.px_per_cm;
    gt.reading_cm = spec.waterline_cm;
    gt.image_width = spec.image_width;
    gt.image_height = spec.image_height;
    gt.px_per_cm = spec.px_per_cm;
    gt.tilt_deg = spec.tilt_deg;
    for (double v = spec.top_value_cm; v >= spec.bottom_value_cm(); v -= kMajorIntervalCm) {
        gt.major_marks.push_back({spec.row_of(v), v});
    }
    const double top = spec.top_row() - kPlateHeaderCm * spec.px_per_cm;
    gt.plate_box = {spec.plate_left(), top, static_cast<double>(spec.plate_width_px), gt.waterline_row - top};
    return gt;
}

/// Oracle keypoint detection: the marks a perfect detector would see above the water.
inline PlateDetection oracle_detection(const GroundTruth& gt)
{
    PlateDetection det;
    det.bbox = gt.plate_box;
    det.plate_height_px = gt.plate_box.height;
    for (const auto& m : gt.major_marks) {
        if (m.row <= gt.waterline_row) {
            det.keypoints.push_back({m.row, gt.plate_box.x + 0.25 * gt.plate_box.width, m.value_cm, 1.0});
        }
    }
    return det;
}

namespace detail {

inline std::uint8_t blend(std::uint8_t a, std::uint8_t b, double f) { return quantize((1.0 - f) * a + f * b); }

inline std::string numeral_text(double value_cm)
{
    return std::to_string(static_cast<long>(std::lround(value_cm / 10.0)));
}

}  // namespace detail

inline std::pair<Raster, GroundTruth> render(const GaugeSpec& spec)
{
    GroundTruth gt = ground_truth_for(spec);
    const int W = spec.image_width;
    const int H = spec.image_height;
    const double ppc = spec.px_per_cm;
    Raster img(W, H, 3);

    // Bank: smooth low-frequency shading.
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    const double p1 = phase(rng), p2 = phase(rng), p3 = phase(rng);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const double s = 8.0 * std::sin(x / 90.0 + p1) * std::cos(y / 140.0 + p2) + 4.0 * std::sin((x + y) / 200.0 + p3);
            put_pixel(img, x, y, Rgb{quantize(palette::bank.r + s), quantize(palette::bank.g + s), quantize(palette::bank.b + s)});
        }
    }

    // Plate body.
    const double x0 = spec.plate_left();
    const double wp = spec.plate_width_px;
    const double plate_top = spec.top_row() - kPlateHeaderCm * ppc;
    const double plate_bottom = spec.top_row() + spec.plate_height_cm * ppc;
    fill_rect(img, x0, plate_top, x0 + wp, plate_bottom, palette::plate);

    // One triangle per centimeter.
    const double margin = std::max(2.0, 0.05 * wp);
    for (double v = spec.top_value_cm; v > spec.bottom_value_cm(); v -= 1.0) {
        const double ya = spec.row_of(v);
        const long cm = std::lround(v);
        const double len = (cm % 5 == 0) ? 0.36 * wp : 0.24 * wp;
        const std::array<Point2, 3> tri{{{x0 + margin, ya}, {x0 + margin + len, ya + ppc / 2}, {x0 + margin, ya + ppc}}};
        fill_convex(img, tri, palette::ink);
    }

    // Major bars and numerals.
    const double bar = std::max(2.0, 0.4 * ppc);
    for (const auto& m : gt.major_marks) {
        fill_rect(img, x0 + margin, m.row - bar / 2, x0 + 0.48 * wp, m.row + bar / 2, palette::ink);
        if (m.value_cm - 7.0 < spec.bottom_value_cm()) continue;
        const std::string txt = detail::numeral_text(m.value_cm);
        const double area_w = 0.42 * wp;
        const double gw = std::min(area_w / (1.3 * txt.size()), 4.0 * ppc * 0.6);
        const double gh = 6.0 * ppc;
        const double stroke = std::max(2.0, 0.22 * gw);
        draw_text(img, txt, x0 + 0.53 * wp, m.row + ppc, gw, gh, stroke, palette::ink);
    }

    // Water below the waterline, with fractional coverage on the boundary row.
    const double wl = gt.waterline_row;
    for (int y = std::max(0, static_cast<int>(std::floor(wl - 0.5))); y < H; ++y) {
        const double f = std::clamp(y + 0.5 - wl, 0.0, 1.0);
        if (f <= 0.0) continue;
        for (int x = 0; x < W; ++x) {
            const double s = 3.0 * std::sin(x / 70.0 + p2) * std::sin(y / 50.0 + p1);
            const Rgb wc{quantize(palette::water.r + s), quantize(palette::water.g + s), quantize(palette::water.b + s)};
            img.at(x, y, 0) = detail::blend(img.at(x, y, 0), wc.r, f);
            img.at(x, y, 1) = detail::blend(img.at(x, y, 1), wc.g, f);
            img.at(x, y, 2) = detail::blend(img.at(x, y, 2), wc.b, f);
        }
    }

    if (spec.tilt_deg != 0.0) img = rotate_image(img, spec.tilt_deg);
    return {std::move(img), std::move(gt)};
}

namespace detail {

inline void fill_clutter(Raster& img, const OcclusionRect& r, std::mt19937_64& rng)
{
    std::uniform_int_distribution<int> block(2, 6);
    std::uniform_int_distribution<int> tone(0, 255);
    const int xa = std::max(0, static_cast<int>(std::floor(r.x)));
    const int xb = std::min(img.width(), static_cast<int>(std::ceil(r.x + r.width)));
    const int ya = std::max(0, static_cast<int>(std::floor(r.y)));
    const int yb = std::min(img.height(), static_cast<int>(std::ceil(r.y + r.height)));
    for (int y = ya; y < yb;) {
        const int bh = block(rng);
        for (int x = xa; x < xb;) {
            const int bw = block(rng);
            const int t = tone(rng);
            // Vegetation and debris tones.
            const Rgb c{quantize(t * 0.6), quantize(t * 0.8), quantize(t * 0.4)};
            for (int yy = y; yy < std::min(yb, y + bh); ++yy)
                for (int xx = x; xx < std::min(xb, x + bw); ++xx) put_pixel(img, xx, yy, c);
            x += bw;
        }
        y += bh;
    }
}

}  // namespace detail

/// blur -> noise -> brightness/contrast -> occlusions; deterministic in seed.
inline Raster degrade(const Raster& img, const Degradation& d, std::uint64_t seed)
{
    d.validate();
    if (d.is_identity()) return img;
    Raster out = img;
    std::mt19937_64 rng(seed);
    if (d.blur_sigma > 0.0) out = gaussian_blur(out, d.blur_sigma);
    if (d.noise_sigma > 0.0) {
        std::normal_distribution<double> noise(0.0, d.noise_sigma);
        for (auto& v : out.data()) v = quantize(v + noise(rng));
    }
    if (d.brightness_shift != 0.0 || d.contrast_scale != 1.0) {
        for (auto& v : out.data()) v = quantize((v - 128.0) * d.contrast_scale + 128.0 + d.brightness_shift);
    }
    for (const auto& r : d.occlusions) detail::fill_clutter(out, r, rng);
    return out;
}

/// Seeded shuffle, train gets floor(n * train_frac); both halves sorted.
inline std::pair<std::vector<std::string>, std::vector<std::string>> split_dataset(std::vector<std::string> ids,
                                                                                   double train_frac, std::uint64_t seed)
{
    if (ids.empty()) throw std::invalid_argument("split_dataset: empty input");
    if (!(train_frac > 0.0 && train_frac < 1.0)) throw std::invalid_argument("split_dataset: train_frac must be in (0,1)");
    std::sort(ids.begin(), ids.end());
    std::mt19937_64 rng(seed);
    std::shuffle(ids.begin(), ids.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(ids.size()) * train_frac + 1e-9));
    std::vector<std::string> train(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<std::string> test(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
    return {std::move(train), std::move(test)};
}

struct Annotation {
    int class_id = 0;
    double cx = 0, cy = 0, w = 0, h = 0;  // normalized
    std::vector<std::pair<double, double>> keypoints;  // normalized (x, y)
};

inline constexpr int kPlateClass = 0;
inline constexpr int kWaterlineClass = 1;

/// One line per object: the visible plate (with its keypoints appended) and
/// the +-5 row waterline zone. All coordinates normalized by image size.
inline std::string export_annotations(const GroundTruth& gt, int image_width, int image_height)
{
    if (image_width < 1 || image_height < 1) throw std::invalid_argument("export_annotations: bad image size");
    const double W = image_width, H = image_height;
    auto clamp01 = [](double v) { return std::clamp(v, 0.0, 1.0); };
    std::ostringstream os;
    char buf[64];
    auto box = [&](int cls, const PixelBox& b) {
        std::snprintf(buf, sizeof buf, "%d %.6f %.6f %.6f %.6f", cls, clamp01((b.x + b.width / 2) / W),
                      clamp01((b.y + b.height / 2) / H), clamp01(b.width / W), clamp01(b.height / H));
        os << buf;
    };
    box(kPlateClass, gt.plate_box);
    for (const auto& m : gt.major_marks) {
        if (m.row > gt.waterline_row) continue;
        std::snprintf(buf, sizeof buf, " %.6f %.6f", clamp01((gt.plate_box.x + 0.25 * gt.plate_box.width) / W),
                      clamp01(m.row / H));
        os << buf;
    }
    os << '\n';
    box(kWaterlineClass, PixelBox{gt.plate_box.x, gt.waterline_row - 5.0, gt.plate_box.width, 10.0});
    os << '\n';
    return os.str();
}

inline Annotation parse_annotation_line(const std::string& line)
{
    std::istringstream is(line);
    Annotation a;
    if (!(is >> a.class_id >> a.cx >> a.cy >> a.w >> a.h)) throw std::invalid_argument("parse_annotation_line: malformed line");
    double kx = 0, ky = 0;
    while (is >> kx >> ky) a.keypoints.emplace_back(kx, ky);
    return a;
}

inline PixelBox to_pixel_box(const Annotation& a, int image_width, int image_height)
{
    const double w = a.w * image_width, h = a.h * image_height;
    return {a.cx * image_width - w / 2, a.cy * image_height - h / 2, w, h};
}

// ---------------------------------------------------------------------------
// Corpora

struct Sample {
    std::string id;
    GaugeSpec spec;
    Degradation degradation;
};

struct CorpusOptions {
    int count = 100;
    std::uint64_t seed = 42;
    double degraded_fraction = 0.0;
    double max_tilt_deg = 0.0;
    int image_width = 360;
    int image_height = 900;
};

inline std::string sample_id(int i)
{
    char buf[16];
    std::snprintf(buf, sizeof buf, "g%05d", i);
    return buf;
}

/// Random but valid gauge scene.
inline GaugeSpec random_spec(std::mt19937_64& rng, const CorpusOptions& o)
{
    auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
    auto pick = [&](std::initializer_list<int> xs) {
        std::uniform_int_distribution<std::size_t> d(0, xs.size() - 1);
        return *(xs.begin() + d(rng));
    };
    GaugeSpec s;
    s.image_width = o.image_width;
    s.image_height = o.image_height;
    s.plate_height_cm = pick({80, 100, 120});
    s.px_per_cm = std::round(uni(4.0, 7.0) * 100.0) / 100.0;
    while ((s.plate_height_cm + kPlateHeaderCm) * s.px_per_cm > s.image_height - 20) s.px_per_cm -= 0.25;
    s.plate_width_px = static_cast<int>(uni(90, 130));
    s.top_value_cm = pick({120, 150, 200, 250, 300});
    const double lo = s.bottom_value_cm() + 5.0;
    const double hi = s.top_value_cm - 25.0;
    s.waterline_cm = std::round(uni(lo, hi) * 10.0) / 10.0;
    s.plate_left_px = std::floor(uni(40.0, s.image_width - s.plate_width_px - 40.0));
    const double slack = s.image_height - s.plate_extent_px();
    s.top_row_px = std::floor(uni(0.2, 0.8) * slack) + kPlateHeaderCm * s.px_per_cm;
    s.tilt_deg = o.max_tilt_deg > 0.0 ? std::round(uni(-o.max_tilt_deg, o.max_tilt_deg) * 10.0) / 10.0 : 0.0;
    s.seed = rng();
    return s;
}

/// Field-like degradation: heavy blur plus clutter occluding the plate from
/// above the waterline down to the image bottom.
inline Degradation occluded_waterline_degradation(const GaugeSpec& spec, double blur_sigma = 3.0)
{
    Degradation d;
    d.blur_sigma = blur_sigma;
    const double wl = spec.row_of(spec.waterline_cm);
    const double top = std::max(0.0, wl - 12.0 * spec.px_per_cm);
    d.occlusions.push_back({spec.plate_left() - 10.0, top, spec.plate_width_px + 20.0, spec.image_height - top});
    return d;
}

inline std::vector<Sample> make_corpus(const CorpusOptions& o)
{
    std::mt19937_64 rng(o.seed);
    std::vector<Sample> out;
    out.reserve(static_cast<std::size_t>(std::max(0, o.count)));
    for (int i = 0; i < o.count; ++i) {
        Sample s{sample_id(i), random_spec(rng, o), {}};
        if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < o.degraded_fraction) {
            s.degradation = occluded_waterline_degradation(s.spec);
        }
        out.push_back(std::move(s));
    }
    return out;
}

inline std::pair<Raster, GroundTruth> render_sample(const Sample& s)
{
    auto [img, gt] = render(s.spec);
    gt.quality = quality_of(s.degradation);
    return {degrade(img, s.degradation, s.spec.seed ^ 0x9e3779b97f4a7c15ull), std::move(gt)};
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const GroundTruth& gt)
{
    nlohmann::json marks = nlohmann::json::array();
    for (const auto& m : gt.major_marks) marks.push_back({{"row", m.row}, {"value_cm", m.value_cm}});
    return {
        {"waterline_row", gt.waterline_row},
        {"major_keypoints", marks},
        {"d_m_px", gt.d_m_px},
        {"reading_cm", gt.reading_cm},
        {"quality", to_string(gt.quality)},
        {"plate_bbox", {gt.plate_box.x, gt.plate_box.y, gt.plate_box.width, gt.plate_box.height}},
        {"image_width", gt.image_width},
        {"image_height", gt.image_height},
        {"px_per_cm", gt.px_per_cm},
        {"tilt_deg", gt.tilt_deg},
    };
}

inline GroundTruth ground_truth_from_json(const nlohmann::json& j)
{
    GroundTruth gt;
    gt.waterline_row = j.at("waterline_row").get<double>();
    for (const auto& m : j.at("major_keypoints")) gt.major_marks.push_back({m.at("row").get<double>(), m.at("value_cm").get<double>()});
    gt.d_m_px = j.at("d_m_px").get<double>();
    gt.reading_cm = j.at("reading_cm").get<double>();
    gt.quality = quality_from_string(j.at("quality").get<std::string>());
    const auto& b = j.at("plate_bbox");
    gt.plate_box = {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>()};
    gt.image_width = j.at("image_width").get<int>();
    gt.image_height = j.at("image_height").get<int>();
    gt.px_per_cm = j.value("px_per_cm", 0.0);
    gt.tilt_deg = j.value("tilt_deg", 0.0);
    return gt;
}

}  // namespace gauge
