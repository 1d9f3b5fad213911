#include "gaugeread/evalkit.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <sstream>

using namespace gauge;

namespace {

// Quartile by explicit rank arithmetic on a sorted copy.
double quartile(std::vector<double> v, double p)
{
    std::sort(v.begin(), v.end());
    const double h = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(h);
    if (lo + 1 >= v.size()) return v.back();
    return v[lo] + (h - static_cast<double>(lo)) * (v[lo + 1] - v[lo]);
}

std::vector<std::size_t> iqr_kept_oracle(const std::vector<double>& x, double k)
{
    std::vector<std::size_t> kept;
    if (x.size() < 4) {
        for (std::size_t i = 0; i < x.size(); ++i) kept.push_back(i);
        return kept;
    }
    const double q1 = quartile(x, 0.25), q3 = quartile(x, 0.75);
    for (std::size_t i = 0; i < x.size(); ++i)
        if (!(x[i] < q1 - k * (q3 - q1)) && !(x[i] > q3 + k * (q3 - q1))) kept.push_back(i);
    return kept;
}

ReadingRecord rec(std::string id, double obs, std::optional<double> pred, std::string model = "m", int stage = 1,
                  std::string quality = "optimal")
{
    ReadingRecord r;
    r.image_id = std::move(id);
    r.observed_cm = obs;
    r.predicted_cm = pred;
    r.model_tag = std::move(model);
    r.stage = stage;
    r.quality = std::move(quality);
    return r;
}

const GroupRow& row_for(const EvalReport& r, const std::string& model, int stage, const std::string& q)
{
    for (const auto& g : r.rows)
        if (g.model == model && g.stage == stage && g.quality == q) return g;
    throw std::runtime_error("row not found");
}

std::vector<ReadingRecord> mixed_records(std::uint64_t seed, int n)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> err(0, 4);
    std::uniform_real_distribution<double> obs(80, 250), u(0, 1);
    std::vector<ReadingRecord> out;
    for (int i = 0; i < n; ++i) {
        const std::string id = "img" + std::to_string(i);
        const double o = std::round(obs(rng) * 10) / 10;
        const std::string q = u(rng) < 0.3 ? "sub-optimal" : "optimal";
        for (int stage : {1, 2}) {
            std::optional<double> p;
            if (u(rng) > 0.1) p = o + err(rng) * (u(rng) < 0.05 ? 12 : 1);
            out.push_back(rec(id, o, p, "mock", stage, q));
        }
        auto g = rec(id, o, o + err(rng) * 0.1, "geometric", 0, q);
        g.waterline_true_row = 300 + i;
        g.waterline_pred_row = 300 + i + std::round(err(rng));
        g.confidence = u(rng);
        out.push_back(g);
    }
    return out;
}

std::string slurp(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST(Iqr, RemovesTheObviousOutlier)
{
    const std::vector<double> x{1, 2, 3, 4, 5, 6, 7, 8, 9, 100};
    const auto r = iqr_filter(x);
    EXPECT_DOUBLE_EQ(r.q1, 3.25);
    EXPECT_DOUBLE_EQ(r.q3, 7.75);
    EXPECT_DOUBLE_EQ(r.upper, 14.5);
    ASSERT_EQ(r.removed.size(), 1u);
    EXPECT_EQ(r.removed[0], 9u);
    EXPECT_DOUBLE_EQ(r.removed_pct(), 10.0);
}

TEST(Iqr, DegenerateInputs)
{
    const std::vector<double> same(7, 3.0);
    const auto r = iqr_filter(same);
    EXPECT_TRUE(r.removed.empty());
    EXPECT_DOUBLE_EQ(r.q3 - r.q1, 0.0);
    const std::vector<double> small{1, 1000, -1000};
    EXPECT_FALSE(iqr_filter(small).filtered);
    EXPECT_EQ(iqr_filter(small).kept.size(), 3u);
    EXPECT_TRUE(iqr_filter(std::vector<double>{}).kept.empty());
    EXPECT_THROW(iqr_filter(same, -1), std::invalid_argument);
}

TEST(Iqr, MatchesQuartileOracle)
{
    std::mt19937_64 rng(6);
    std::uniform_int_distribution<int> len(0, 60);
    std::cauchy_distribution<double> heavy(0, 3);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> x(len(rng));
        for (auto& v : x) v = std::round(heavy(rng) * 8) / 8;
        ASSERT_EQ(iqr_filter(x).kept, iqr_kept_oracle(x, 1.5)) << "trial " << trial;
    }
}

TEST(Metrics, HandArithmetic)
{
    const std::vector<double> obs{100, 110, 120}, pred{102, 108, 123};
    const auto m = regression_metrics(obs, pred);
    EXPECT_DOUBLE_EQ(m.bias_cm, 1.0);
    EXPECT_DOUBLE_EQ(m.mae_cm, 7.0 / 3.0);
    EXPECT_DOUBLE_EQ(m.rmse_cm, std::sqrt(17.0 / 3.0));
    EXPECT_NEAR(m.rmse_cm, 2.3804761428476167, 1e-15);
    // 1 - SSE/SST = 1 - 17/200
    EXPECT_NEAR(*m.r2, 1.0 - 17.0 / 200.0, 1e-15);
}

TEST(Metrics, PerfectAndConstantOffset)
{
    const std::vector<double> obs{100, 130, 170.5, 220};
    const auto perfect = regression_metrics(obs, obs);
    EXPECT_EQ(perfect.bias_cm, 0.0);
    EXPECT_EQ(perfect.mae_cm, 0.0);
    EXPECT_EQ(perfect.rmse_cm, 0.0);
    EXPECT_EQ(*perfect.r2, 1.0);
    std::vector<double> shifted = obs;
    for (auto& v : shifted) v += 13.97;
    const auto m = regression_metrics(obs, shifted);
    EXPECT_NEAR(m.bias_cm, 13.97, 1e-9);
    EXPECT_NEAR(m.mae_cm, 13.97, 1e-9);
    EXPECT_NEAR(m.rmse_cm, 13.97, 1e-9);
}

TEST(Metrics, Preconditions)
{
    EXPECT_THROW(regression_metrics(std::vector<double>{1}, std::vector<double>{1}), std::invalid_argument);
    EXPECT_THROW(regression_metrics(std::vector<double>{1, 2}, std::vector<double>{1}), std::invalid_argument);
    EXPECT_THROW(regression_metrics(std::vector<double>{1, NAN}, std::vector<double>{1, 2}), std::invalid_argument);
    EXPECT_FALSE(regression_metrics(std::vector<double>{5, 5}, std::vector<double>{4, 6}).r2.has_value());
}

TEST(Metrics, IdentitiesOnRandomData)
{
    std::mt19937_64 rng(8);
    std::normal_distribution<double> d(0, 20);
    std::uniform_int_distribution<int> len(2, 50);
    for (int trial = 0; trial < 2000; ++trial) {
        std::vector<double> obs(len(rng)), pred(obs.size());
        for (std::size_t i = 0; i < obs.size(); ++i) {
            obs[i] = 150 + d(rng);
            pred[i] = obs[i] + (trial % 10 == 0 ? 0.0 : d(rng));
        }
        const auto m = regression_metrics(obs, pred);
        EXPECT_LE(m.mae_cm, m.rmse_cm + 1e-12);
        EXPECT_LE(std::abs(m.bias_cm), m.mae_cm + 1e-12);
        ASSERT_TRUE(m.r2.has_value());
        EXPECT_EQ(*m.r2 == 1.0, m.rmse_cm == 0.0);
    }
}

TEST(Confusion, ZoneExample)
{
    std::vector<ReadingRecord> rs;
    for (double p : {100.0, 106.0}) {
        auto r = rec("a", 0, 0);
        r.waterline_true_row = 100;
        r.waterline_pred_row = p;
        r.confidence = 0.9;
        rs.push_back(r);
    }
    const auto c = confusion_metrics(rs);
    EXPECT_EQ(c.tp, 1u);
    EXPECT_EQ(c.fp, 1u);
    EXPECT_EQ(c.fn, 0u);
    EXPECT_DOUBLE_EQ(*c.precision, 0.5);
    EXPECT_DOUBLE_EQ(*c.recall, 1.0);
    EXPECT_NEAR(*c.f1, 2.0 / 3.0, 1e-15);
}

TEST(Confusion, ThresholdAndMissingDetections)
{
    std::vector<ReadingRecord> rs;
    auto a = rec("a", 0, 0);
    a.waterline_true_row = 50;
    a.waterline_pred_row = 52;
    a.confidence = 0.1;  // below threshold: not a detection
    rs.push_back(a);
    auto b = rec("b", 0, 0);
    b.waterline_true_row = 70;  // no prediction at all
    rs.push_back(b);
    auto c = rec("c", 0, 0);
    c.waterline_true_row = 90;
    c.waterline_pred_row = 95;  // zone edge is inclusive
    c.confidence = 0.2;
    rs.push_back(c);
    const auto s = confusion_metrics(rs);
    EXPECT_EQ(s.tp, 1u);
    EXPECT_EQ(s.fp, 0u);
    EXPECT_EQ(s.fn, 2u);
    EXPECT_FALSE(confusion_metrics({}).precision.has_value());
}

TEST(Breakdown, StageTwoHalvesStageOneError)
{
    std::vector<ReadingRecord> rs;
    for (int i = 0; i < 20; ++i) {
        const double obs = 100 + 3 * i;
        const double e = (i % 2 ? 1 : -1) * (2.0 + i % 5);
        rs.push_back(rec("i" + std::to_string(i), obs, obs + e, "mock", 1));
        rs.push_back(rec("i" + std::to_string(i), obs, obs + e / 2, "mock", 2));
    }
    const auto r = evaluate(rs);
    const auto& s1 = row_for(r, "mock", 1, "all");
    const auto& s2 = row_for(r, "mock", 2, "all");
    EXPECT_EQ(s1.n_outliers, 0u);
    EXPECT_EQ(*s2.mae_cm, *s1.mae_cm / 2);
}

TEST(Breakdown, RowsKeyedByModelStageQuality)
{
    const auto recs = mixed_records(1, 40);
    const auto r = evaluate(recs);
    ASSERT_EQ(r.rows.size(), 9u);  // geometric/0, mock/1, mock/2 x three qualities
    EXPECT_EQ(r.rows[0].model, "geometric");
    EXPECT_EQ(r.rows[3].model, "mock");
    EXPECT_EQ(r.rows[3].stage, 1);
    EXPECT_EQ(r.rows[6].stage, 2);
    for (std::size_t i = 0; i < r.rows.size(); ++i) EXPECT_EQ(r.rows[i].quality, quality_levels()[i % 3]);
    for (int k = 0; k < 3; ++k) {
        const auto& all = r.rows[3 * k];
        const auto& opt = r.rows[3 * k + 1];
        const auto& sub = r.rows[3 * k + 2];
        EXPECT_EQ(all.n_records, opt.n_records + sub.n_records);
        EXPECT_EQ(all.n_outliers, opt.n_outliers + sub.n_outliers);
        EXPECT_EQ(all.n_rejected, opt.n_rejected + sub.n_rejected);
        EXPECT_EQ(all.n_predicted, all.n_used + all.n_outliers);
        EXPECT_EQ(all.n_records, all.n_predicted + all.n_rejected);
    }
}

TEST(Breakdown, RejectedPredictionCountsOnlyInRejectionRate)
{
    std::vector<ReadingRecord> rs{rec("a", 100, 101), rec("b", 110, 111), rec("c", 120, std::nullopt),
                                  rec("d", 130, 131)};
    const auto& g = row_for(evaluate(rs), "m", 1, "all");
    EXPECT_EQ(g.n_rejected, 1u);
    EXPECT_DOUBLE_EQ(g.rejection_rate, 25.0);
    EXPECT_EQ(g.n_used, 3u);
    EXPECT_DOUBLE_EQ(*g.mae_cm, 1.0);
}

TEST(Breakdown, OutliersLeaveMetricsButNotAverageError)
{
    std::vector<ReadingRecord> rs;
    for (int i = 0; i < 9; ++i) rs.push_back(rec("i" + std::to_string(i), 100, 100 + (i + 1)));
    rs.push_back(rec("z", 100, 200));
    const auto& g = row_for(evaluate(rs), "m", 1, "all");
    EXPECT_EQ(g.n_outliers, 1u);
    EXPECT_DOUBLE_EQ(g.outlier_pct, 10.0);
    EXPECT_DOUBLE_EQ(*g.mae_cm, 5.0);
    EXPECT_DOUBLE_EQ(*g.avg_abs_error_cm, (45.0 + 100.0) / 10.0);
}

TEST(Breakdown, PermutationInvariant)
{
    auto recs = mixed_records(2, 60);
    const std::string a = report_csv(evaluate(recs));
    std::mt19937_64 rng(3);
    for (int i = 0; i < 5; ++i) {
        std::shuffle(recs.begin(), recs.end(), rng);
        EXPECT_EQ(report_csv(evaluate(recs)), a);
    }
}

TEST(Report, EmptyInputIsHeaderOnly)
{
    const auto r = evaluate({});
    EXPECT_EQ(report_csv(r), std::string(kReportHeader) + "\n");
    testutil::TempDir dir("rep");
    emit_report(r, dir.path());
    EXPECT_EQ(slurp(dir.path() / "report.csv"), std::string(kReportHeader) + "\n");
}

TEST(Report, CsvFormatting)
{
    std::vector<ReadingRecord> rs{rec("a", 100, 102), rec("b", 110, 108), rec("c", 120, 123)};
    const std::string csv = report_csv(evaluate(rs));
    EXPECT_NE(csv.find("\nm,1,all,3,3,3,0,0.00,0,0.00,1.0000,2.3333,2.3805,0.9150,2.3333\n"), std::string::npos) << csv;
    EXPECT_NE(csv.find("\nm,1,sub-optimal,0,0,0,0,0.00,0,0.00,,,,,\n"), std::string::npos) << csv;
    const std::string heat = heatmap_csv(evaluate(rs));
    EXPECT_EQ(heat.substr(0, heat.find('\n')), "group,bias_cm,mae_cm,rmse_cm,r2,outlier_pct,rejection_rate");
    EXPECT_NE(heat.find("\nm/stage1/all,1.0000,"), std::string::npos);
}

TEST(Report, ByteStableAndJsonRoundTrip)
{
    const auto recs = mixed_records(4, 50);
    testutil::TempDir d1("rep1"), d2("rep2");
    emit_report(evaluate(recs), d1.path());
    emit_report(evaluate(recs), d2.path());
    for (const char* f : {"report.csv", "report.json", "heatmap.csv"}) EXPECT_EQ(slurp(d1.path() / f), slurp(d2.path() / f)) << f;

    const auto rep = evaluate(recs);
    const auto back = eval_report_from_json(nlohmann::json::parse(slurp(d1.path() / "report.json")));
    EXPECT_EQ(back.rows, rep.rows);
    EXPECT_EQ(to_json(back), to_json(rep));
    EXPECT_EQ(report_csv(back), report_csv(rep));
}

TEST(Report, SummaryMentionsEveryGroup)
{
    const std::string s = format_summary(evaluate(mixed_records(5, 20)));
    EXPECT_NE(s.find("geometric"), std::string::npos);
    EXPECT_NE(s.find("sub-optimal"), std::string::npos);
    EXPECT_NE(s.find("waterline: TP="), std::string::npos);
}

TEST(Records, JsonRoundTrip)
{
    for (const auto& r : mixed_records(7, 10)) {
        const auto back = reading_record_from_json(to_json(r));
        EXPECT_EQ(to_json(back), to_json(r));
    }
}
