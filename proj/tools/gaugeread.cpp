#include "gaugeread/pipeline.hpp"

#include "CLI11.hpp"

#include <iostream>

namespace {

using gauge::ExitCode;

void add_gen(CLI::App& app, gauge::GenOptions& g, std::string& out)
{
    auto* gen = app.add_subcommand("gen", "Render a synthetic gauge dataset");
    gen->add_option("--count", g.corpus.count, "Number of images")->check(CLI::PositiveNumber);
    gen->add_option("--seed", g.corpus.seed, "Corpus seed");
    gen->add_option("--out", out, "Output directory")->required();
    gen->add_option("--degraded-fraction", g.corpus.degraded_fraction, "Fraction rendered with blur and occlusion")
        ->check(CLI::Range(0.0, 1.0));
    gen->add_option("--max-tilt", g.corpus.max_tilt_deg, "Maximum absolute tilt in degrees")->check(CLI::Range(0.0, 45.0));
    gen->add_option("--train-frac", g.train_frac, "Train fraction of the split");
    gen->add_option("--width", g.corpus.image_width, "Image width");
    gen->add_option("--height", g.corpus.image_height, "Image height");
    gen->add_option("--workers", g.workers, "Render threads")->check(CLI::PositiveNumber);
}

int run_gen(const gauge::GenOptions& g, const std::string& out)
{
    gauge::generate_dataset(out, g);
    std::cout << "wrote " << g.corpus.count << " images to " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
#ifdef GAUGE_GEN_ONLY
    CLI::App app{"Synthetic staff-gauge dataset generator"};
#else
    CLI::App app{"Staff-gauge water level reader"};
#endif
    app.require_subcommand(1);

    gauge::GenOptions gen_opts;
    std::string gen_out;
    add_gen(app, gen_opts, gen_out);

#ifndef GAUGE_GEN_ONLY
    gauge::PipelineConfig cfg;
    std::string config_path, input, manifest, detections, detector, stages, backend, model_tag, provider, cache_dir,
        output;
    double threshold = 0, min_len = 0, gate = 0, rate = 0;
    int workers = 0, in_flight = 0;
    std::uint64_t seed = 0;
    bool no_deskew = false, resume = false;

    auto* run = app.add_subcommand("run", "Run the reading pipeline over a directory of images");
    run->add_option("--config", config_path, "JSON config; flags override it");
    auto* o_input = run->add_option("--input", input, "Input directory (images/ or image files)");
    auto* o_manifest = run->add_option("--manifest", manifest, "Truth manifest CSV");
    auto* o_dets = run->add_option("--detections", detections, "Detection interchange JSON");
    auto* o_detector = run->add_option("--detector", detector, "oracle | file | classical");
    auto* o_thr = run->add_option("--threshold", threshold, "Waterline confidence threshold");
    auto* o_nodeskew = run->add_flag("--no-deskew", no_deskew, "Skip skew correction");
    auto* o_minlen = run->add_option("--deskew-min-len", min_len, "Minimum Hough segment length in px");
    auto* o_gate = run->add_option("--deskew-gate", gate, "Mean deviation below which no rotation is applied");
    auto* o_stages = run->add_option("--llm-stages", stages, "none | 1 | 2 | both");
    auto* o_backend = run->add_option("--llm-backend", backend, "mock | http");
    auto* o_model = run->add_option("--model-tag", model_tag, "Model identifier recorded with readings");
    auto* o_provider = run->add_option("--provider", provider, "generic | openai | gemini (http backend)");
    auto* o_cache = run->add_option("--cache-dir", cache_dir, "Response cache directory");
    auto* o_inflight = run->add_option("--max-in-flight", in_flight, "Concurrent model requests");
    auto* o_rate = run->add_option("--rate", rate, "Model requests per second (0: unlimited)");
    auto* o_output = run->add_option("--output", output, "Output directory");
    auto* o_seed = run->add_option("--seed", seed, "Seed for retry jitter");
    auto* o_workers = run->add_option("--workers", workers, "Image worker threads");
    auto* o_resume = run->add_flag("--resume", resume, "Skip ids already in the output");

    std::string ev_records, ev_manifest, ev_out = "report";
    gauge::EvalOptions ev;
    auto* eval = app.add_subcommand("eval", "Score run records against a truth manifest");
    eval->add_option("--records", ev_records, "records.jsonl from a run")->required();
    eval->add_option("--manifest", ev_manifest, "Truth manifest CSV")->required();
    eval->add_option("--out", ev_out, "Report directory");
    eval->add_option("--zone-px", ev.zone_px, "Positive zone half-height in rows");
    eval->add_option("--conf-threshold", ev.conf_threshold, "Waterline confidence threshold");
    eval->add_option("--iqr-k", ev.iqr_k, "IQR fence factor");
#endif

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : static_cast<int>(ExitCode::usage);
    }

    try {
        if (app.got_subcommand("gen")) return run_gen(gen_opts, gen_out);
#ifndef GAUGE_GEN_ONLY
        if (app.got_subcommand("run")) {
            if (!config_path.empty()) {
                nlohmann::json j;
                try {
                    j = nlohmann::json::parse(gauge::read_text(config_path));
                } catch (const nlohmann::json::exception& e) {
                    throw gauge::ImageIoError("config " + config_path + ": " + e.what());
                }
                gauge::apply_config_json(cfg, j);
            }
            if (*o_input) cfg.input_dir = input;
            if (*o_manifest) cfg.manifest = manifest;
            if (*o_dets) cfg.detections = detections;
            if (*o_detector) cfg.detector = detector;
            if (*o_thr) cfg.waterline_threshold = threshold;
            if (*o_nodeskew) cfg.deskew_enabled = !no_deskew;
            if (*o_minlen) cfg.deskew.min_len = min_len;
            if (*o_gate) cfg.deskew.gate_deg = gate;
            if (*o_stages) cfg.llm = gauge::llm_stages_from_string(stages);
            if (*o_backend) cfg.llm_backend = backend;
            if (*o_model) cfg.model_tag = model_tag;
            if (*o_provider) cfg.provider = provider;
            if (*o_cache) cfg.cache_dir = cache_dir;
            if (*o_inflight) cfg.max_in_flight = in_flight;
            if (*o_rate) cfg.rate_per_sec = rate;
            if (*o_output) cfg.output_dir = output;
            if (*o_seed) cfg.seed = seed;
            if (*o_workers) cfg.workers = workers;
            if (*o_resume) cfg.resume = resume;
            if (cfg.input_dir.empty()) {
                std::cerr << "run: --input or a config with input_dir is required\n";
                return static_cast<int>(ExitCode::usage);
            }
            const auto s = gauge::run_pipeline(cfg);
            return static_cast<int>(s.exit);
        }
        if (app.got_subcommand("eval")) {
            const auto rep = gauge::run_eval(ev_records, ev_manifest, ev_out, ev);
            std::cout << gauge::format_summary(rep);
            return 0;
        }
#endif
    } catch (const gauge::ImageIoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::io);
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::io);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::usage);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::io);
    }
    return static_cast<int>(ExitCode::usage);
}
