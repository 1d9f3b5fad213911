#include "gaugeread/synthgauge.hpp"
#include "gaugeread/waterline.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

using namespace gauge;

namespace {

std::vector<std::string> ids(int n)
{
    std::vector<std::string> v;
    for (int i = 0; i < n; ++i) v.push_back(sample_id(i));
    return v;
}

}  // namespace

TEST(SynthGauge, WaterlineRowArithmetic)
{
    GaugeSpec s;
    s.px_per_cm = 6;
    s.top_row_px = 200;
    s.top_value_cm = 200;
    s.waterline_cm = 115;
    EXPECT_DOUBLE_EQ(ground_truth_for(s).waterline_row, 200 + 510);

    s.waterline_cm = s.top_value_cm;
    EXPECT_DOUBLE_EQ(ground_truth_for(s).waterline_row, 200);
}

TEST(SynthGauge, MajorGapIsTenCentimetres)
{
    for (double ppc : {4.0, 5.5, 7.0}) {
        GaugeSpec s;
        s.px_per_cm = ppc;
        const auto gt = ground_truth_for(s);
        EXPECT_DOUBLE_EQ(gt.d_m_px, 10 * ppc);
        const auto det = oracle_detection(gt);
        std::vector<double> rows;
        for (const auto& k : det.keypoints) rows.push_back(k.row);
        EXPECT_DOUBLE_EQ(major_gap(rows), 10 * ppc);
    }
}

TEST(SynthGauge, SpecValidation)
{
    GaugeSpec s;
    s.waterline_cm = 50;  // below the plate bottom (200 - 100)
    EXPECT_THROW(s.validate(), std::invalid_argument);
    s = {};
    s.tilt_deg = 50;
    EXPECT_THROW(s.validate(), std::invalid_argument);
    s = {};
    s.top_value_cm = 205;
    EXPECT_THROW(s.validate(), std::invalid_argument);
    s = {};
    s.px_per_cm = 20;
    EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(SynthGauge, RenderIsDeterministic)
{
    GaugeSpec s;
    s.seed = 99;
    const auto a = render(s);
    const auto b = render(s);
    EXPECT_EQ(a.first, b.first);
    EXPECT_EQ(a.first.channels(), 3);
    EXPECT_EQ(a.first.width(), s.image_width);
    EXPECT_EQ(a.first.height(), s.image_height);
}

TEST(SynthGauge, RenderSeparatesPlateFromWater)
{
    GaugeSpec s;
    const auto [img, gt] = render(s);
    const Raster gray = to_grayscale(img);
    const int x = static_cast<int>(gt.plate_box.x + 0.9 * gt.plate_box.width);
    const int above = static_cast<int>(gt.waterline_row) - 3;
    const int below = static_cast<int>(gt.waterline_row) + 3;
    EXPECT_GT(gray.at(x, above), 180);
    EXPECT_LT(gray.at(x, below), 80);
}

TEST(SynthGauge, IdentityDegradationIsBitExact)
{
    const auto img = render(GaugeSpec{}).first;
    EXPECT_EQ(degrade(img, Degradation{}, 3), img);
    EXPECT_TRUE(Degradation{}.is_identity());
    EXPECT_EQ(quality_of(Degradation{}), Quality::optimal);
    Degradation d;
    d.blur_sigma = 1;
    EXPECT_EQ(quality_of(d), Quality::sub_optimal);
}

TEST(SynthGauge, DegradationIsSeedDeterministic)
{
    const auto img = render(GaugeSpec{}).first;
    Degradation d;
    d.noise_sigma = 12;
    d.occlusions.push_back({10, 10, 50, 50});
    EXPECT_EQ(degrade(img, d, 7), degrade(img, d, 7));
    EXPECT_NE(degrade(img, d, 7), degrade(img, d, 8));
}

TEST(SynthGauge, NoiseSigmaMatchesSampleStatistics)
{
    const Raster flat(200, 200, 1, 128);
    Degradation d;
    d.noise_sigma = 10;
    const Raster out = degrade(flat, d, 1);
    double s = 0, ss = 0;
    const double n = static_cast<double>(out.data().size());
    for (auto v : out.data()) {
        const double diff = v - 128.0;
        s += diff;
        ss += diff * diff;
    }
    const double sd = std::sqrt(ss / n - (s / n) * (s / n));
    EXPECT_NEAR(sd, 10.0, 2.0);
}

TEST(SynthGauge, SplitSizes)
{
    const auto [tr, te] = split_dataset(ids(548), 0.8, 1);
    EXPECT_EQ(tr.size(), 438u);
    EXPECT_EQ(te.size(), 110u);
    const auto [tr10, te10] = split_dataset(ids(10), 0.8, 1);
    EXPECT_EQ(tr10.size(), 8u);
    EXPECT_EQ(te10.size(), 2u);
    EXPECT_THROW(split_dataset({}, 0.8, 1), std::invalid_argument);
    EXPECT_THROW(split_dataset(ids(3), 1.0, 1), std::invalid_argument);
}

TEST(SynthGauge, SplitIsSeededPartition)
{
    const auto a = split_dataset(ids(548), 0.8, 42);
    const auto b = split_dataset(ids(548), 0.8, 42);
    const auto c = split_dataset(ids(548), 0.8, 43);
    EXPECT_EQ(a, b);
    EXPECT_NE(a.first, c.first);
    std::set<std::string> all(a.first.begin(), a.first.end());
    for (const auto& t : a.second) EXPECT_TRUE(all.insert(t).second);
    EXPECT_EQ(all.size(), 548u);
    // Input order does not matter.
    auto rev = ids(548);
    std::reverse(rev.begin(), rev.end());
    EXPECT_EQ(split_dataset(rev, 0.8, 42), a);
}

TEST(SynthGauge, AnnotationNormalization)
{
    GroundTruth gt;
    gt.plate_box = {0, 100, 640, 200};
    gt.waterline_row = 300;
    auto line = export_annotations(gt, 640, 640);
    auto a = parse_annotation_line(line.substr(0, line.find('\n')));
    EXPECT_EQ(a.class_id, kPlateClass);
    EXPECT_DOUBLE_EQ(a.cx, 0.5);
    EXPECT_DOUBLE_EQ(a.w, 1.0);

    gt.plate_box = {240, 240, 160, 160};
    line = export_annotations(gt, 640, 640);
    a = parse_annotation_line(line.substr(0, line.find('\n')));
    EXPECT_DOUBLE_EQ(a.cx, 0.5);
    EXPECT_DOUBLE_EQ(a.cy, 0.5);
    EXPECT_DOUBLE_EQ(a.w, 0.25);
    EXPECT_DOUBLE_EQ(a.h, 0.25);
    EXPECT_THROW(parse_annotation_line("0 0.5"), std::invalid_argument);
}

TEST(SynthGauge, AnnotationRoundTrip)
{
    CorpusOptions o;
    std::mt19937_64 rng(12);
    for (int i = 0; i < 50; ++i) {
        const auto gt = ground_truth_for(random_spec(rng, o));
        const std::string text = export_annotations(gt, gt.image_width, gt.image_height);
        std::istringstream is(text);
        std::string plate_line, wl_line;
        std::getline(is, plate_line);
        std::getline(is, wl_line);
        const auto a = parse_annotation_line(plate_line);
        const PixelBox b = to_pixel_box(a, gt.image_width, gt.image_height);
        EXPECT_NEAR(b.x, gt.plate_box.x, 0.5);
        EXPECT_NEAR(b.y, gt.plate_box.y, 0.5);
        EXPECT_NEAR(b.width, gt.plate_box.width, 0.5);
        EXPECT_NEAR(b.height, gt.plate_box.height, 0.5);
        const auto det = oracle_detection(gt);
        ASSERT_EQ(a.keypoints.size(), det.keypoints.size());
        for (std::size_t k = 0; k < a.keypoints.size(); ++k) {
            EXPECT_NEAR(a.keypoints[k].second * gt.image_height, det.keypoints[k].row, 0.5);
        }
        const auto w = parse_annotation_line(wl_line);
        EXPECT_EQ(w.class_id, kWaterlineClass);
        EXPECT_NEAR(w.cy * gt.image_height, gt.waterline_row, 0.5);
    }
}

TEST(SynthGauge, CorpusQualityFollowsDegradation)
{
    CorpusOptions o;
    o.count = 40;
    o.degraded_fraction = 0.5;
    const auto corpus = make_corpus(o);
    int degraded = 0;
    for (const auto& s : corpus) {
        degraded += !s.degradation.is_identity();
        s.spec.validate();
    }
    EXPECT_GT(degraded, 5);
    EXPECT_LT(degraded, 35);
    EXPECT_EQ(make_corpus(o).size(), 40u);
    EXPECT_EQ(make_corpus(o)[7].spec.seed, corpus[7].spec.seed);
    const auto [img, gt] = render_sample(corpus[0]);
    EXPECT_EQ(gt.quality, quality_of(corpus[0].degradation));
}

TEST(SynthGauge, OracleReadingExactOnCleanCorpus)
{
    std::mt19937_64 rng(31);
    CorpusOptions o;
    for (int i = 0; i < 200; ++i) {
        const auto gt = ground_truth_for(random_spec(rng, o));
        const auto c = calibrate(oracle_detection(gt), gt.waterline_row);
        EXPECT_LE(std::abs(c.reading_cm - gt.reading_cm), 1.0 / (2 * gt.px_per_cm));
    }
}

TEST(SynthGauge, GroundTruthJsonRoundTrip)
{
    GaugeSpec s;
    s.tilt_deg = 2.5;
    const auto gt = ground_truth_for(s);
    const auto back = ground_truth_from_json(to_json(gt));
    EXPECT_EQ(to_json(back), to_json(gt));
    EXPECT_DOUBLE_EQ(back.waterline_row, gt.waterline_row);
    EXPECT_EQ(back.major_marks.size(), gt.major_marks.size());
}

TEST(SynthGauge, OccludedWaterlineIsMostlyRejected)
{
    CorpusOptions o;
    o.count = 30;
    o.seed = 13;
    o.degraded_fraction = 1.0;
    int rejected = 0;
    for (const auto& s : make_corpus(o)) {
        const auto [img, gt] = render_sample(s);
        const Raster gray = preprocess(img);
        rejected += !detect_waterline(gray, oracle_detection(gt).columns(gray.width())).accepted;
    }
    EXPECT_GE(rejected, 15);
}
