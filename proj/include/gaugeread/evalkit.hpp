#pragma once

// Evaluation: IQR outlier fencing on residuals, regression metrics,
// waterline confusion counts, per-(model, stage, quality) breakdown and
// byte-stable report files.

#include "gaugeread/stats.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace gauge {

struct ReadingRecord {
    std::string image_id;
    double observed_cm = 0;
    std::optional<double> predicted_cm;  // absent: rejected
    std::string model_tag;
    int stage = 1;
    std::string quality = "optimal";
    std::optional<double> waterline_pred_row;
    std::optional<double> waterline_true_row;
    std::optional<double> confidence;
};

struct IqrResult {
    std::vector<std::size_t> kept;
    std::vector<std::size_t> removed;
    bool filtered = false;  // false when n < 4: everything kept
    double q1 = 0, q3 = 0, lower = 0, upper = 0;

    double removed_pct() const
    {
        const std::size_t n = kept.size() + removed.size();
        return n == 0 ? 0.0 : 100.0 * static_cast<double>(removed.size()) / static_cast<double>(n);
    }
};

/// Keeps x in [Q1 - k IQR, Q3 + k IQR]; quartiles by linear interpolation.
inline IqrResult iqr_filter(std::span<const double> x, double k = 1.5)
{
    if (!(k >= 0.0)) throw std::invalid_argument("iqr_filter: k must be >= 0");
    IqrResult r;
    if (x.size() < 4) {
        for (std::size_t i = 0; i < x.size(); ++i) r.kept.push_back(i);
        return r;
    }
    std::vector<double> s(x.begin(), x.end());
    std::sort(s.begin(), s.end());
    r.filtered = true;
    r.q1 = percentile_sorted(s, 0.25);
    r.q3 = percentile_sorted(s, 0.75);
    const double iqr = r.q3 - r.q1;
    r.lower = r.q1 - k * iqr;
    r.upper = r.q3 + k * iqr;
    for (std::size_t i = 0; i < x.size(); ++i) {
        (x[i] < r.lower || x[i] > r.upper ? r.removed : r.kept).push_back(i);
    }
    return r;
}

struct MetricsSummary {
    std::size_t n_used = 0;
    std::size_t n_outliers_removed = 0;
    double outlier_pct = 0;
    double bias_cm = 0;
    double mae_cm = 0;
    double rmse_cm = 0;
    std::optional<double> r2;  // absent when observed variance is zero
};

inline MetricsSummary regression_metrics(std::span<const double> observed, std::span<const double> predicted)
{
    if (observed.size() != predicted.size()) throw std::invalid_argument("regression_metrics: size mismatch");
    const std::size_t n = observed.size();
    if (n < 2) throw std::invalid_argument("regression_metrics: need at least two pairs");
    double se = 0, ae = 0, sq = 0, so = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(observed[i]) || !std::isfinite(predicted[i])) {
            throw std::invalid_argument("regression_metrics: non-finite value");
        }
        const double e = predicted[i] - observed[i];
        se += e;
        ae += std::abs(e);
        sq += e * e;
        so += observed[i];
    }
    const double dn = static_cast<double>(n);
    const double obs_mean = so / dn;
    double ss_tot = 0;
    for (double o : observed) ss_tot += (o - obs_mean) * (o - obs_mean);

    MetricsSummary m;
    m.n_used = n;
    m.bias_cm = se / dn;
    m.mae_cm = ae / dn;
    m.rmse_cm = std::sqrt(sq / dn);
    if (ss_tot > 0.0) m.r2 = 1.0 - sq / ss_tot;
    return m;
}

struct ConfusionSummary {
    std::size_t tp = 0, fp = 0, fn = 0;
    std::optional<double> precision, recall, f1;
};

/// Each record with a predicted row is one detection, accepted when its
/// confidence (absent counts as 0) reaches the threshold. FN counts annotated
/// images without any accepted detection.
inline ConfusionSummary confusion_metrics(std::span<const ReadingRecord> records, double zone_px = 5.0,
                                          double threshold = 0.20)
{
    ConfusionSummary c;
    std::set<std::string> annotated, detected;
    for (const auto& r : records) {
        if (!r.waterline_true_row) continue;
        annotated.insert(r.image_id);
        if (!r.waterline_pred_row || r.confidence.value_or(0.0) < threshold) continue;
        detected.insert(r.image_id);
        if (std::abs(*r.waterline_pred_row - *r.waterline_true_row) <= zone_px) {
            ++c.tp;
        } else {
            ++c.fp;
        }
    }
    for (const auto& id : annotated) c.fn += detected.count(id) ? 0 : 1;
    if (c.tp + c.fp > 0) c.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    if (c.tp + c.fn > 0) c.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    if (c.precision && c.recall && *c.precision + *c.recall > 0.0) {
        c.f1 = 2.0 * *c.precision * *c.recall / (*c.precision + *c.recall);
    }
    return c;
}

inline const std::vector<std::string>& quality_levels()
{
    static const std::vector<std::string> q{"all", "optimal", "sub-optimal"};
    return q;
}

struct GroupRow {
    std::string model;
    int stage = 0;
    std::string quality;  // "all", "optimal" or "sub-optimal"
    std::size_t n_records = 0;
    std::size_t n_predicted = 0;
    std::size_t n_used = 0;
    std::size_t n_outliers = 0;
    double outlier_pct = 0;
    std::size_t n_rejected = 0;
    double rejection_rate = 0;  // percent
    std::optional<double> bias_cm, mae_cm, rmse_cm, r2;
    std::optional<double> avg_abs_error_cm;  // mean |error| before outlier removal

    bool operator==(const GroupRow&) const = default;
};

struct EvalReport {
    std::vector<GroupRow> rows;
    ConfusionSummary confusion;
};

/// Outliers are fenced per (model, stage) over all its predictions; each
/// quality row then reports the subset. Every (model, stage) present gets all
/// three quality rows, possibly with n = 0.
inline std::vector<GroupRow> quality_breakdown(std::span<const ReadingRecord> records, double iqr_k = 1.5)
{
    std::map<std::pair<std::string, int>, std::vector<const ReadingRecord*>> by_ms;
    for (const auto& r : records) by_ms[{r.model_tag, r.stage}].push_back(&r);

    std::vector<GroupRow> out;
    for (auto& [key, group] : by_ms) {
        // Canonical order makes the result independent of input order.
        std::sort(group.begin(), group.end(), [](const ReadingRecord* a, const ReadingRecord* b) {
            const double pa = a->predicted_cm.value_or(-HUGE_VAL), pb = b->predicted_cm.value_or(-HUGE_VAL);
            return std::tie(a->image_id, a->quality, a->observed_cm, pa) < std::tie(b->image_id, b->quality, b->observed_cm, pb);
        });
        std::vector<double> residuals;
        std::vector<const ReadingRecord*> predicted;
        for (const auto* r : group) {
            if (!r->predicted_cm) continue;
            residuals.push_back(*r->predicted_cm - r->observed_cm);
            predicted.push_back(r);
        }
        const IqrResult fence = iqr_filter(residuals, iqr_k);
        std::vector<bool> outlier(predicted.size(), false);
        for (std::size_t i : fence.removed) outlier[i] = true;

        for (const auto& q : quality_levels()) {
            GroupRow row;
            row.model = key.first;
            row.stage = key.second;
            row.quality = q;
            auto in = [&](const ReadingRecord* r) { return q == "all" || r->quality == q; };
            for (const auto* r : group) {
                if (!in(r)) continue;
                ++row.n_records;
                if (!r->predicted_cm) ++row.n_rejected;
            }
            std::vector<double> obs, pred;
            double abs_sum = 0;
            for (std::size_t i = 0; i < predicted.size(); ++i) {
                if (!in(predicted[i])) continue;
                ++row.n_predicted;
                abs_sum += std::abs(residuals[i]);
                if (outlier[i]) {
                    ++row.n_outliers;
                    continue;
                }
                obs.push_back(predicted[i]->observed_cm);
                pred.push_back(*predicted[i]->predicted_cm);
            }
            row.n_used = obs.size();
            if (row.n_predicted > 0) {
                row.outlier_pct = 100.0 * static_cast<double>(row.n_outliers) / static_cast<double>(row.n_predicted);
                row.avg_abs_error_cm = abs_sum / static_cast<double>(row.n_predicted);
            }
            if (row.n_records > 0) {
                row.rejection_rate = 100.0 * static_cast<double>(row.n_rejected) / static_cast<double>(row.n_records);
            }
            if (obs.size() >= 2) {
                const MetricsSummary m = regression_metrics(obs, pred);
                row.bias_cm = m.bias_cm;
                row.mae_cm = m.mae_cm;
                row.rmse_cm = m.rmse_cm;
                row.r2 = m.r2;
            }
            out.push_back(std::move(row));
        }
    }
    return out;
}

inline EvalReport evaluate(std::span<const ReadingRecord> records, double zone_px = 5.0, double threshold = 0.20,
                           double iqr_k = 1.5)
{
    return {quality_breakdown(records, iqr_k), confusion_metrics(records, zone_px, threshold)};
}

// ---------------------------------------------------------------------------
// Serialization

namespace detail {

inline nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

inline std::optional<double> opt_from(const nlohmann::json& j, const char* key)
{
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
}

inline std::string fixed(const std::optional<double>& v, int digits = 4)
{
    if (!v) return "";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, *v == 0.0 ? 0.0 : *v);
    return buf;
}

}  // namespace detail

inline nlohmann::json to_json(const GroupRow& r)
{
    return {{"model", r.model},
            {"stage", r.stage},
            {"quality", r.quality},
            {"n_records", r.n_records},
            {"n_predicted", r.n_predicted},
            {"n_used", r.n_used},
            {"n_outliers", r.n_outliers},
            {"outlier_pct", r.outlier_pct},
            {"n_rejected", r.n_rejected},
            {"rejection_rate", r.rejection_rate},
            {"bias_cm", detail::opt(r.bias_cm)},
            {"mae_cm", detail::opt(r.mae_cm)},
            {"rmse_cm", detail::opt(r.rmse_cm)},
            {"r2", detail::opt(r.r2)},
            {"avg_abs_error_cm", detail::opt(r.avg_abs_error_cm)}};
}

inline GroupRow group_row_from_json(const nlohmann::json& j)
{
    GroupRow r;
    r.model = j.at("model").get<std::string>();
    r.stage = j.at("stage").get<int>();
    r.quality = j.at("quality").get<std::string>();
    r.n_records = j.at("n_records").get<std::size_t>();
    r.n_predicted = j.at("n_predicted").get<std::size_t>();
    r.n_used = j.at("n_used").get<std::size_t>();
    r.n_outliers = j.at("n_outliers").get<std::size_t>();
    r.outlier_pct = j.at("outlier_pct").get<double>();
    r.n_rejected = j.at("n_rejected").get<std::size_t>();
    r.rejection_rate = j.at("rejection_rate").get<double>();
    r.bias_cm = detail::opt_from(j, "bias_cm");
    r.mae_cm = detail::opt_from(j, "mae_cm");
    r.rmse_cm = detail::opt_from(j, "rmse_cm");
    r.r2 = detail::opt_from(j, "r2");
    r.avg_abs_error_cm = detail::opt_from(j, "avg_abs_error_cm");
    return r;
}

inline nlohmann::json to_json(const ConfusionSummary& c)
{
    return {{"tp", c.tp},
            {"fp", c.fp},
            {"fn", c.fn},
            {"precision", detail::opt(c.precision)},
            {"recall", detail::opt(c.recall)},
            {"f1", detail::opt(c.f1)}};
}

inline ConfusionSummary confusion_from_json(const nlohmann::json& j)
{
    ConfusionSummary c;
    c.tp = j.at("tp").get<std::size_t>();
    c.fp = j.at("fp").get<std::size_t>();
    c.fn = j.at("fn").get<std::size_t>();
    c.precision = detail::opt_from(j, "precision");
    c.recall = detail::opt_from(j, "recall");
    c.f1 = detail::opt_from(j, "f1");
    return c;
}

inline nlohmann::json to_json(const EvalReport& r)
{
    nlohmann::json groups = nlohmann::json::array();
    for (const auto& g : r.rows) groups.push_back(to_json(g));
    return {{"groups", groups}, {"waterline", to_json(r.confusion)}};
}

inline EvalReport eval_report_from_json(const nlohmann::json& j)
{
    EvalReport r;
    for (const auto& g : j.at("groups")) r.rows.push_back(group_row_from_json(g));
    r.confusion = confusion_from_json(j.at("waterline"));
    return r;
}

inline const char* kReportHeader =
    "model,stage,quality,n_records,n_predicted,n_used,n_outliers,outlier_pct,n_rejected,rejection_rate,"
    "bias_cm,mae_cm,rmse_cm,r2,avg_abs_error_cm";

inline std::string report_csv(const EvalReport& r)
{
    std::string s = std::string(kReportHeader) + "\n";
    for (const auto& g : r.rows) {
        s += g.model + "," + std::to_string(g.stage) + "," + g.quality + "," + std::to_string(g.n_records) + "," +
             std::to_string(g.n_predicted) + "," + std::to_string(g.n_used) + "," + std::to_string(g.n_outliers) + "," +
             detail::fixed(g.outlier_pct, 2) + "," + std::to_string(g.n_rejected) + "," +
             detail::fixed(g.rejection_rate, 2) + "," + detail::fixed(g.bias_cm) + "," + detail::fixed(g.mae_cm) + "," +
             detail::fixed(g.rmse_cm) + "," + detail::fixed(g.r2) + "," + detail::fixed(g.avg_abs_error_cm) + "\n";
    }
    return s;
}

/// Groups x metrics matrix for heat-map plotting.
inline std::string heatmap_csv(const EvalReport& r)
{
    std::string s = "group,bias_cm,mae_cm,rmse_cm,r2,outlier_pct,rejection_rate\n";
    for (const auto& g : r.rows) {
        s += g.model + "/stage" + std::to_string(g.stage) + "/" + g.quality + "," + detail::fixed(g.bias_cm) + "," +
             detail::fixed(g.mae_cm) + "," + detail::fixed(g.rmse_cm) + "," + detail::fixed(g.r2) + "," +
             detail::fixed(g.outlier_pct, 2) + "," + detail::fixed(g.rejection_rate, 2) + "\n";
    }
    return s;
}

inline void emit_report(const EvalReport& r, const std::filesystem::path& dir)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    auto write = [&](const char* name, const std::string& text) {
        std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
        out << text;
        if (!out) throw std::runtime_error("emit_report: cannot write " + (dir / name).string());
    };
    write("report.csv", report_csv(r));
    write("report.json", to_json(r).dump(2) + "\n");
    write("heatmap.csv", heatmap_csv(r));
}

/// Fixed-width comparison table, one line per group, then waterline counts.
inline std::string format_summary(const EvalReport& r)
{
    std::string s;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-12s %5s %-11s %6s %8s %8s %8s %8s %8s %8s %8s\n", "model", "stage", "quality", "n",
                  "outl%", "rej%", "bias", "MAE", "RMSE", "R2", "avg|e|");
    s += buf;
    auto f = [](const std::optional<double>& v) { return v ? detail::fixed(v, 3) : std::string("-"); };
    for (const auto& g : r.rows) {
        std::snprintf(buf, sizeof buf, "%-12s %5d %-11s %6zu %8.2f %8.2f %8s %8s %8s %8s %8s\n", g.model.c_str(), g.stage,
                      g.quality.c_str(), g.n_records, g.outlier_pct, g.rejection_rate, f(g.bias_cm).c_str(),
                      f(g.mae_cm).c_str(), f(g.rmse_cm).c_str(), f(g.r2).c_str(), f(g.avg_abs_error_cm).c_str());
        s += buf;
    }
    const auto& c = r.confusion;
    auto pct = [](const std::optional<double>& v) { return v ? detail::fixed(100.0 * *v, 2) + "%" : std::string("-"); };
    std::snprintf(buf, sizeof buf, "waterline: TP=%zu FP=%zu FN=%zu precision=%s recall=%s F1=%s\n", c.tp, c.fp, c.fn,
                  pct(c.precision).c_str(), pct(c.recall).c_str(), pct(c.f1).c_str());
    s += buf;
    return s;
}

// ---------------------------------------------------------------------------
// Record JSONL

inline nlohmann::json to_json(const ReadingRecord& r)
{
    return {{"image_id", r.image_id},
            {"observed_cm", r.observed_cm},
            {"predicted_cm", detail::opt(r.predicted_cm)},
            {"model_tag", r.model_tag},
            {"stage", r.stage},
            {"quality", r.quality},
            {"waterline_pred_row", detail::opt(r.waterline_pred_row)},
            {"waterline_true_row", detail::opt(r.waterline_true_row)},
            {"confidence", detail::opt(r.confidence)}};
}

inline ReadingRecord reading_record_from_json(const nlohmann::json& j)
{
    ReadingRecord r;
    r.image_id = j.at("image_id").get<std::string>();
    r.observed_cm = j.at("observed_cm").get<double>();
    r.predicted_cm = detail::opt_from(j, "predicted_cm");
    r.model_tag = j.at("model_tag").get<std::string>();
    r.stage = j.at("stage").get<int>();
    r.quality = j.value("quality", std::string("optimal"));
    r.waterline_pred_row = detail::opt_from(j, "waterline_pred_row");
    r.waterline_true_row = detail::opt_from(j, "waterline_true_row");
    r.confidence = detail::opt_from(j, "confidence");
    return r;
}

}  // namespace gauge
