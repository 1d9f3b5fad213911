#pragma once

// Batch orchestration: dataset generation, the per-image pipeline
// (preprocess, deskew, detect, waterline, calibrate, model stages), run
// records as JSONL and the evaluation join against the manifest.

#include "gaugeread/deskew.hpp"
#include "gaugeread/detectors.hpp"
#include "gaugeread/evalkit.hpp"
#include "gaugeread/image_io.hpp"
#include "gaugeread/llm_http.hpp"
#include "gaugeread/llm_reader.hpp"
#include "gaugeread/scale_calib.hpp"
#include "gaugeread/synthgauge.hpp"
#include "gaugeread/waterline.hpp"

#include "json.hpp"

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace gauge {

namespace fs = std::filesystem;

enum class ExitCode : int { ok = 0, usage = 1, io = 2, all_failed = 3 };

/// Runs fn(i) for i in [0, n) on `workers` threads.
template <class Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn)
{
    const std::size_t w = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
    if (w <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < w; ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

inline void write_text(const fs::path& p, const std::string& s)
{
    write_file_bytes(p, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

inline std::string read_text(const fs::path& p)
{
    const auto b = read_file_bytes(p);
    return std::string(b.begin(), b.end());
}

// ---------------------------------------------------------------------------
// Manifest

struct ManifestRow {
    std::string id;
    std::string quality;
    double reading_cm = 0;
    std::optional<double> waterline_row;
    std::string split;
};

inline std::string manifest_csv(const std::vector<ManifestRow>& rows)
{
    std::string s = "id,quality,reading_cm,waterline_row,split\n";
    for (const auto& r : rows) {
        s += r.id + "," + r.quality + "," + format_number(r.reading_cm) + "," +
             (r.waterline_row ? format_number(*r.waterline_row) : std::string()) + "," + r.split + "\n";
    }
    return s;
}

/// Requires the id, quality and reading_cm columns; others are optional.
inline std::map<std::string, ManifestRow> read_manifest(const fs::path& p)
{
    std::istringstream in(read_text(p));
    std::string line;
    if (!std::getline(in, line)) throw ImageIoError("manifest: empty file " + p.string());
    auto split = [](const std::string& l) {
        std::vector<std::string> out;
        std::string cell;
        std::istringstream ls(l);
        while (std::getline(ls, cell, ',')) {
            if (!cell.empty() && cell.back() == '\r') cell.pop_back();
            out.push_back(cell);
        }
        if (!l.empty() && l.back() == ',') out.emplace_back();
        return out;
    };
    const auto header = split(line);
    auto col = [&](const std::string& name) -> int {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        return -1;
    };
    const int c_id = col("id"), c_q = col("quality"), c_r = col("reading_cm"), c_w = col("waterline_row"),
              c_s = col("split");
    if (c_id < 0 || c_q < 0 || c_r < 0) throw ImageIoError("manifest: needs id, quality and reading_cm columns");
    std::map<std::string, ManifestRow> out;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto cells = split(line);
        auto get = [&](int c) { return c >= 0 && c < static_cast<int>(cells.size()) ? cells[c] : std::string(); };
        ManifestRow r;
        r.id = get(c_id);
        r.quality = get(c_q);
        try {
            r.reading_cm = std::stod(get(c_r));
            if (!get(c_w).empty()) r.waterline_row = std::stod(get(c_w));
        } catch (const std::exception&) {
            throw ImageIoError("manifest: bad number on line " + std::to_string(lineno));
        }
        r.split = get(c_s);
        out[r.id] = r;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset generation

struct GenOptions {
    CorpusOptions corpus;
    double train_frac = 0.8;
    int workers = 1;
};

/// Writes images/, truth/, labels/, manifest.csv and detections.json (the
/// oracle keypoints) under `out`.
inline void generate_dataset(const fs::path& out, const GenOptions& o)
{
    if (o.corpus.count < 1) throw std::invalid_argument("gen: count must be >= 1");
    fs::create_directories(out / "images");
    fs::create_directories(out / "truth");
    fs::create_directories(out / "labels");
    const auto samples = make_corpus(o.corpus);
    std::vector<GroundTruth> truths(samples.size());
    parallel_for(samples.size(), o.workers, [&](std::size_t i) {
        const auto& s = samples[i];
        auto [img, gt] = render_sample(s);
        write_image(out / "images" / (s.id + ".png"), img);
        write_text(out / "truth" / (s.id + ".json"), to_json(gt).dump(1) + "\n");
        write_text(out / "labels" / (s.id + ".txt"), export_annotations(gt, img.width(), img.height()));
        truths[i] = std::move(gt);
    });

    std::vector<std::string> ids;
    for (const auto& s : samples) ids.push_back(s.id);
    const auto [train, test] = split_dataset(ids, o.train_frac, o.corpus.seed);
    const std::set<std::string> train_set(train.begin(), train.end());

    std::vector<ManifestRow> rows;
    DetectionMap dets;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& gt = truths[i];
        rows.push_back({samples[i].id, to_string(gt.quality), gt.reading_cm, gt.waterline_row,
                        train_set.count(samples[i].id) ? "train" : "test"});
        dets.emplace(samples[i].id, oracle_detection(gt));
    }
    write_text(out / "manifest.csv", manifest_csv(rows));
    write_detections(out / "detections.json", dets);
}

// ---------------------------------------------------------------------------
// Pipeline

enum class LlmStages { none, stage1, stage2, both };

inline LlmStages llm_stages_from_string(const std::string& s)
{
    if (s == "none") return LlmStages::none;
    if (s == "1") return LlmStages::stage1;
    if (s == "2") return LlmStages::stage2;
    if (s == "both") return LlmStages::both;
    throw std::invalid_argument("llm stages must be none, 1, 2 or both (got '" + s + "')");
}

inline std::string to_string(LlmStages s)
{
    switch (s) {
    case LlmStages::none: return "none";
    case LlmStages::stage1: return "1";
    case LlmStages::stage2: return "2";
    case LlmStages::both: return "both";
    }
    return "none";
}

struct PipelineConfig {
    fs::path input_dir;
    fs::path manifest;          // default: <input>/manifest.csv, optional
    fs::path detections;        // default: <input>/detections.json
    std::string detector = "oracle";
    double waterline_threshold = 0.20;
    DeskewParams deskew{};
    bool deskew_enabled = true;
    LlmStages llm = LlmStages::none;
    std::string llm_backend = "mock";  // mock | http
    std::string model_tag = "mock";
    std::string provider = "generic";
    fs::path cache_dir;  // default: <output>/.cache/llm
    int max_in_flight = 4;
    double rate_per_sec = 0.0;
    fs::path output_dir = "run";
    std::uint64_t seed = 0;
    int workers = 1;
    bool resume = false;

    fs::path images_dir() const { return fs::is_directory(input_dir / "images") ? input_dir / "images" : input_dir; }
    fs::path manifest_path() const { return manifest.empty() ? input_dir / "manifest.csv" : manifest; }
    fs::path detections_path() const { return detections.empty() ? input_dir / "detections.json" : detections; }
    fs::path records_path() const { return output_dir / "records.jsonl"; }
    fs::path timings_path() const { return output_dir / "records.timings.jsonl"; }
    fs::path cache_path() const { return cache_dir.empty() ? output_dir / ".cache" / "llm" : cache_dir; }

    void validate() const
    {
        if (input_dir.empty() || !fs::is_directory(input_dir)) {
            throw ImageIoError("input directory does not exist: " + input_dir.string());
        }
        if (!(waterline_threshold >= 0.0 && waterline_threshold <= 1.0)) {
            throw std::invalid_argument("waterline threshold must be in [0,1]");
        }
        if (detector != "oracle" && detector != "file" && detector != "classical") {
            throw std::invalid_argument("detector must be oracle, file or classical");
        }
        if (detector != "classical" && !fs::exists(detections_path())) {
            throw ImageIoError("detections file not found: " + detections_path().string());
        }
        if (llm_backend != "mock" && llm_backend != "http") throw std::invalid_argument("llm backend must be mock or http");
        if (workers < 1) throw std::invalid_argument("workers must be >= 1");
    }
};

/// Keys mirror the field names; unknown keys are rejected.
inline void apply_config_json(PipelineConfig& c, const nlohmann::json& j)
{
    if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
    for (const auto& [k, v] : j.items()) {
        if (k == "input_dir") c.input_dir = v.get<std::string>();
        else if (k == "manifest") c.manifest = v.get<std::string>();
        else if (k == "detections") c.detections = v.get<std::string>();
        else if (k == "detector") c.detector = v.get<std::string>();
        else if (k == "waterline_threshold") c.waterline_threshold = v.get<double>();
        else if (k == "deskew") c.deskew_enabled = v.get<bool>();
        else if (k == "deskew_min_len") c.deskew.min_len = v.get<double>();
        else if (k == "deskew_gate_deg") c.deskew.gate_deg = v.get<double>();
        else if (k == "deskew_edge_threshold") c.deskew.edge_threshold = v.get<double>();
        else if (k == "llm_stages") c.llm = llm_stages_from_string(v.is_string() ? v.get<std::string>() : v.dump());
        else if (k == "llm_backend") c.llm_backend = v.get<std::string>();
        else if (k == "model_tag") c.model_tag = v.get<std::string>();
        else if (k == "provider") c.provider = v.get<std::string>();
        else if (k == "cache_dir") c.cache_dir = v.get<std::string>();
        else if (k == "max_in_flight") c.max_in_flight = v.get<int>();
        else if (k == "rate_per_sec") c.rate_per_sec = v.get<double>();
        else if (k == "output_dir") c.output_dir = v.get<std::string>();
        else if (k == "seed") c.seed = v.get<std::uint64_t>();
        else if (k == "workers") c.workers = v.get<int>();
        else if (k == "resume") c.resume = v.get<bool>();
        else throw std::invalid_argument("config: unknown key '" + k + "'");
    }
}

struct StageReading {
    int stage = 1;
    std::optional<double> reading_cm;
    std::optional<std::string> error;
    int attempts = 0;
    double latency_ms = 0;
};

struct RunRecord {
    std::string image_id;
    std::optional<double> skew_deg;
    std::optional<WaterlineResult> waterline;
    std::optional<ScaleGeometry> geometry;
    std::optional<double> major_reading_cm;
    std::optional<double> reading_geometric_cm;
    std::string model_tag;
    std::vector<StageReading> llm;
    std::map<std::string, double> timings_ms;
    std::optional<std::string> error;

    bool ok() const { return !error; }
};

/// Deterministic part of a record; timings and attempt counts go to the sidecar.
inline nlohmann::json to_json(const RunRecord& r)
{
    using nlohmann::json;
    auto opt = [](const auto& v) { return v ? json(*v) : json(nullptr); };
    json wl = nullptr;
    if (r.waterline) {
        wl = {{"row", r.waterline->row},
              {"coarse_row", r.waterline->coarse_row},
              {"confidence", r.waterline->confidence},
              {"accepted", r.waterline->accepted}};
    }
    json cal = nullptr;
    if (r.geometry) {
        cal = {{"d_m", r.geometry->d_m},
               {"d_n", r.geometry->d_n},
               {"R", r.geometry->ratio},
               {"anchor_row", r.geometry->anchor_row},
               {"plate_height_px", r.geometry->plate_height_px},
               {"M", opt(r.major_reading_cm)},
               {"W_geometric", opt(r.reading_geometric_cm)}};
    }
    json llm = json::array();
    for (const auto& s : r.llm) {
        llm.push_back({{"stage", s.stage}, {"model", r.model_tag}, {"reading_cm", opt(s.reading_cm)}, {"error", opt(s.error)}});
    }
    return {{"image_id", r.image_id}, {"skew_deg", opt(r.skew_deg)}, {"waterline", wl},
            {"calibration", cal},     {"llm", llm},                  {"error", opt(r.error)}};
}

inline RunRecord run_record_from_json(const nlohmann::json& j)
{
    auto optd = [](const nlohmann::json& o, const char* k) -> std::optional<double> {
        if (!o.contains(k) || o.at(k).is_null()) return std::nullopt;
        return o.at(k).get<double>();
    };
    RunRecord r;
    r.image_id = j.at("image_id").get<std::string>();
    r.skew_deg = optd(j, "skew_deg");
    if (j.contains("waterline") && !j.at("waterline").is_null()) {
        const auto& w = j.at("waterline");
        r.waterline = WaterlineResult{w.at("row").get<int>(), w.at("coarse_row").get<int>(),
                                      w.at("confidence").get<double>(), w.at("accepted").get<bool>()};
    }
    if (j.contains("calibration") && !j.at("calibration").is_null()) {
        const auto& c = j.at("calibration");
        ScaleGeometry g;
        g.d_m = c.at("d_m").get<double>();
        g.d_n = c.at("d_n").get<double>();
        g.ratio = c.at("R").get<double>();
        g.anchor_row = c.value("anchor_row", 0.0);
        g.plate_height_px = c.value("plate_height_px", 0.0);
        r.geometry = g;
        r.major_reading_cm = optd(c, "M");
        r.reading_geometric_cm = optd(c, "W_geometric");
    }
    if (j.contains("llm")) {
        for (const auto& s : j.at("llm")) {
            StageReading sr;
            sr.stage = s.at("stage").get<int>();
            sr.reading_cm = optd(s, "reading_cm");
            if (s.contains("error") && !s.at("error").is_null()) sr.error = s.at("error").get<std::string>();
            r.model_tag = s.value("model", r.model_tag);
            r.llm.push_back(sr);
        }
    }
    if (j.contains("error") && !j.at("error").is_null()) r.error = j.at("error").get<std::string>();
    return r;
}

inline nlohmann::json timings_json(const RunRecord& r)
{
    nlohmann::json attempts = nlohmann::json::object();
    for (const auto& s : r.llm) {
        attempts["stage" + std::to_string(s.stage)] = {{"attempts", s.attempts}, {"latency_ms", s.latency_ms}};
    }
    return {{"image_id", r.image_id}, {"timings_ms", r.timings_ms}, {"llm", attempts}};
}

/// Everything the per-image pipeline needs besides the image.
struct PipelineContext {
    const KeypointDetector* detector = nullptr;
    ReadingClient* client = nullptr;  // null: no model stages
    LlmStages stages = LlmStages::none;
    std::string model_tag = "mock";
    WaterlineParams waterline{};
    DeskewParams deskew{};
    bool deskew_enabled = true;
};

/// Never throws; failures land in the record's error field.
inline RunRecord process_image(const std::string& id, const Raster& img, const PipelineContext& ctx)
{
    using clock = std::chrono::steady_clock;
    RunRecord rec;
    rec.image_id = id;
    rec.model_tag = ctx.model_tag;
    auto t = clock::now();
    auto lap = [&](const char* phase) {
        const auto now = clock::now();
        rec.timings_ms[phase] = std::chrono::duration<double, std::milli>(now - t).count();
        t = now;
    };
    try {
        const Raster gray = preprocess(img);
        lap("preprocess");

        Raster upright = gray;
        if (ctx.deskew_enabled) {
            DeskewResult d = deskew(gray, ctx.deskew);
            rec.skew_deg = d.estimate.rotation_deg;
            upright = std::move(d.upright);
        } else {
            rec.skew_deg = 0.0;
        }
        lap("deskew");

        const PlateDetection det = ctx.detector->detect(id, upright);
        lap("detect");

        rec.waterline = detect_waterline(upright, det.columns(upright.width()), ctx.waterline);
        lap("waterline");
        if (!rec.waterline->accepted) return rec;

        rec.geometry = measure_geometry(det, rec.waterline->row);
        if (const auto& v = det.keypoints[rec.geometry->anchor_index].value_cm) {
            rec.major_reading_cm = *v;
            rec.reading_geometric_cm = compute_reading(*v, rec.geometry->ratio);
        }
        lap("calibrate");

        if (ctx.client && ctx.stages != LlmStages::none) {
            const int top = static_cast<int>(std::floor(std::max(0.0, det.bbox.y)));
            const Raster view = crop(upright, static_cast<int>(std::floor(det.bbox.x)), top,
                                     static_cast<int>(std::ceil(det.bbox.width)), std::max(1, rec.waterline->row - top));
            const auto png = encode_png(view);
            std::vector<int> stages;
            if (ctx.stages == LlmStages::stage1 || ctx.stages == LlmStages::both) stages.push_back(1);
            if (ctx.stages == LlmStages::stage2 || ctx.stages == LlmStages::both) stages.push_back(2);
            for (int s : stages) {
                ReadingRequest req{id, png, s, std::nullopt, ctx.model_tag};
                if (s == 2) req.metadata = StageMetadata::from(*rec.geometry);
                StageReading sr;
                sr.stage = s;
                try {
                    const ReadingResponse resp = ctx.client->extract(req);
                    sr.reading_cm = resp.reading_cm;
                    sr.attempts = resp.attempts;
                    sr.latency_ms = resp.latency_ms;
                } catch (const UnparseableReading&) {
                    sr.error = "unparseable";
                } catch (const std::exception& e) {
                    sr.error = e.what();
                }
                rec.llm.push_back(std::move(sr));
            }
            lap("llm");
        }
    } catch (const std::exception& e) {
        rec.error = e.what();
    }
    // Requested stages that never ran still get an entry, so evaluation
    // counts them as rejections instead of dropping them.
    if (ctx.client && ctx.stages != LlmStages::none) {
        const std::string why = rec.error ? "skipped: pipeline error" : "skipped: waterline rejected";
        for (int s : {1, 2}) {
            const bool wanted = ctx.stages == LlmStages::both || (s == 1 ? ctx.stages == LlmStages::stage1
                                                                        : ctx.stages == LlmStages::stage2);
            const bool present = std::any_of(rec.llm.begin(), rec.llm.end(), [s](const StageReading& r) { return r.stage == s; });
            if (wanted && !present) rec.llm.push_back({s, std::nullopt, why, 0, 0.0});
        }
    }
    return rec;
}

inline std::vector<fs::path> list_images(const fs::path& dir)
{
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && is_image_path(e.path())) out.push_back(e.path());
    }
    std::sort(out.begin(), out.end(), [](const fs::path& a, const fs::path& b) { return a.stem() < b.stem(); });
    return out;
}

/// Mock truth per image from <input>/truth/<id>.json.
inline std::map<std::string, MockTruth> load_mock_truth(const fs::path& input_dir)
{
    std::map<std::string, MockTruth> out;
    const fs::path dir = input_dir / "truth";
    if (!fs::is_directory(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.path().extension() != ".json") continue;
        const GroundTruth gt = ground_truth_from_json(nlohmann::json::parse(read_text(e.path())));
        MockTruth t{gt.reading_cm, {}};
        for (const auto& m : gt.major_marks) t.major_values_cm.push_back(m.value_cm);
        out.emplace(e.path().stem().string(), std::move(t));
    }
    return out;
}

struct RunSummary {
    std::size_t processed = 0;  // this invocation
    std::size_t skipped = 0;    // resumed
    std::size_t failed = 0;
    std::size_t total = 0;      // records in the output
    ExitCode exit = ExitCode::ok;
};

inline std::vector<nlohmann::json> read_jsonl(const fs::path& p)
{
    std::vector<nlohmann::json> out;
    std::ifstream in(p);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            out.push_back(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception&) {
            // A torn final line from an interrupted run is dropped.
        }
    }
    return out;
}

inline RunSummary run_pipeline(const PipelineConfig& cfg, std::ostream& log = std::cerr)
{
    cfg.validate();
    fs::create_directories(cfg.output_dir);

    std::unique_ptr<KeypointDetector> detector = make_detector(cfg.detector, cfg.detections_path());

    std::unique_ptr<ReadingClient> client;
    if (cfg.llm != LlmStages::none) {
        std::shared_ptr<ModelBackend> backend;
        if (cfg.llm_backend == "mock") {
            backend = std::make_shared<MockBackend>(load_mock_truth(cfg.input_dir));
        } else {
            HttpBackendConfig hc = HttpBackendConfig::from_env();
            hc.provider = provider_from_string(cfg.provider);
            if (hc.endpoint.empty()) throw std::invalid_argument("GAUGE_LLM_ENDPOINT is not set");
            backend = std::make_shared<HttpBackend>(hc);
        }
        ClientOptions co;
        co.max_in_flight = cfg.max_in_flight;
        co.rate_per_sec = cfg.rate_per_sec;
        co.seed = cfg.seed;
        client = std::make_unique<ReadingClient>(backend, std::make_shared<ResponseCache>(cfg.cache_path()), co);
    }

    PipelineContext ctx;
    ctx.detector = detector.get();
    ctx.client = client.get();
    ctx.stages = cfg.llm;
    ctx.model_tag = cfg.model_tag;
    ctx.waterline.threshold = cfg.waterline_threshold;
    ctx.deskew = cfg.deskew;
    ctx.deskew_enabled = cfg.deskew_enabled;

    std::map<std::string, nlohmann::json> done, done_timings;
    if (cfg.resume) {
        // The id is read before the move: assignment sequences its right operand first.
        for (auto& j : read_jsonl(cfg.records_path())) {
            auto id = j.at("image_id").get<std::string>();
            done[std::move(id)] = std::move(j);
        }
        for (auto& j : read_jsonl(cfg.timings_path())) {
            auto id = j.at("image_id").get<std::string>();
            done_timings[std::move(id)] = std::move(j);
        }
    }

    const auto images = list_images(cfg.images_dir());
    std::vector<fs::path> todo;
    for (const auto& p : images) {
        if (!done.count(p.stem().string())) todo.push_back(p);
    }

    RunSummary sum;
    sum.skipped = images.size() - todo.size();

    // Completed records are appended as they finish so an interrupted run can resume.
    std::mutex append_mu;
    std::ofstream records(cfg.records_path(), cfg.resume ? std::ios::app : std::ios::trunc);
    std::ofstream timings(cfg.timings_path(), cfg.resume ? std::ios::app : std::ios::trunc);
    if (!records || !timings) throw ImageIoError("cannot write to " + cfg.output_dir.string());
    if (cfg.resume) {
        records << '\n';
        timings << '\n';
    }

    parallel_for(todo.size(), cfg.workers, [&](std::size_t i) {
        const std::string id = todo[i].stem().string();
        RunRecord rec;
        try {
            const auto t0 = std::chrono::steady_clock::now();
            const Raster img = read_image(todo[i]);
            const double load_ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
            rec = process_image(id, img, ctx);
            rec.timings_ms["load"] = load_ms;
        } catch (const std::exception& e) {
            rec.image_id = id;
            rec.error = e.what();
        }
        std::lock_guard lock(append_mu);
        records << to_json(rec).dump() << '\n' << std::flush;
        timings << timings_json(rec).dump() << '\n' << std::flush;
        done[id] = to_json(rec);
        done_timings[id] = timings_json(rec);
        ++sum.processed;
    });
    records.close();
    timings.close();

    // Final ordering by id; written atomically over the append log.
    std::string out, tout;
    for (const auto& [id, j] : done) {
        out += j.dump() + "\n";
        if (j.contains("error") && !j.at("error").is_null()) ++sum.failed;
    }
    for (const auto& [id, j] : done_timings) tout += j.dump() + "\n";
    const fs::path tmp = cfg.records_path().string() + ".tmp";
    write_text(tmp, out);
    fs::rename(tmp, cfg.records_path());
    write_text(cfg.timings_path(), tout);

    sum.total = done.size();
    if (sum.total == 0 || sum.failed == sum.total) sum.exit = ExitCode::all_failed;
    log << "processed " << sum.processed << ", resumed " << sum.skipped << ", failed " << sum.failed << " of "
        << sum.total << "\n";
    return sum;
}

// ---------------------------------------------------------------------------
// Evaluation join

struct EvalOptions {
    double zone_px = 5.0;
    double conf_threshold = 0.20;
    double iqr_k = 1.5;
};

/// Model readings become (model_tag, stage) rows; the geometric reading is
/// reported as model "geometric", stage 0.
inline std::vector<ReadingRecord> join_records(const std::vector<RunRecord>& runs,
                                               const std::map<std::string, ManifestRow>& manifest,
                                               std::vector<std::string>* unknown_ids = nullptr)
{
    std::vector<ReadingRecord> out;
    for (const auto& r : runs) {
        const auto it = manifest.find(r.image_id);
        if (it == manifest.end()) {
            if (unknown_ids) unknown_ids->push_back(r.image_id);
            continue;
        }
        const ManifestRow& m = it->second;
        ReadingRecord base;
        base.image_id = r.image_id;
        base.observed_cm = m.reading_cm;
        base.quality = m.quality;
        base.waterline_true_row = m.waterline_row;
        if (r.waterline) {
            base.waterline_pred_row = r.waterline->row;
            base.confidence = r.waterline->confidence;
        }
        ReadingRecord geo = base;
        geo.model_tag = "geometric";
        geo.stage = 0;
        geo.predicted_cm = r.reading_geometric_cm;
        out.push_back(geo);
        for (const auto& s : r.llm) {
            ReadingRecord lr = base;
            lr.model_tag = r.model_tag;
            lr.stage = s.stage;
            lr.predicted_cm = s.reading_cm;
            out.push_back(lr);
        }
    }
    return out;
}

inline EvalReport run_eval(const fs::path& records_path, const fs::path& manifest_path, const fs::path& out_dir,
                           const EvalOptions& o = {}, std::ostream& log = std::cerr)
{
    if (!fs::exists(records_path)) throw ImageIoError("records file not found: " + records_path.string());
    const auto manifest = read_manifest(manifest_path);
    std::vector<RunRecord> runs;
    for (const auto& j : read_jsonl(records_path)) runs.push_back(run_record_from_json(j));
    std::vector<std::string> unknown;
    const auto recs = join_records(runs, manifest, &unknown);
    if (!unknown.empty()) {
        log << "warning: " << unknown.size() << " record(s) not in the manifest, skipped:";
        for (const auto& id : unknown) log << ' ' << id;
        log << '\n';
    }
    std::vector<ReadingRecord> geometric;
    for (const auto& r : recs)
        if (r.stage == 0) geometric.push_back(r);
    EvalReport rep{quality_breakdown(recs, o.iqr_k), confusion_metrics(geometric, o.zone_px, o.conf_threshold)};
    emit_report(rep, out_dir);
    return rep;
}

}  // namespace gauge
