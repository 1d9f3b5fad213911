#include "gaugeread/pipeline.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>

using namespace gauge;
namespace fs = std::filesystem;

namespace {

GenOptions small_corpus(int n, double degraded = 0.0)
{
    GenOptions g;
    g.corpus.count = n;
    g.corpus.seed = 17;
    g.corpus.degraded_fraction = degraded;
    g.workers = 2;
    return g;
}

PipelineConfig config_for(const fs::path& data, const fs::path& out, LlmStages stages = LlmStages::none)
{
    PipelineConfig c;
    c.input_dir = data;
    c.output_dir = out;
    c.llm = stages;
    c.workers = 2;
    return c;
}

std::vector<RunRecord> load_records(const fs::path& p)
{
    std::vector<RunRecord> out;
    for (const auto& j : read_jsonl(p)) out.push_back(run_record_from_json(j));
    return out;
}

int run_cli(const std::string& args)
{
    const std::string cmd = std::string(GAUGE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

class PipelineFixture : public ::testing::Test {
protected:
    static void SetUpTestSuite()
    {
        dir_ = new testutil::TempDir("pipe");
        generate_dataset(data(), small_corpus(8, 0.25));
    }
    static void TearDownTestSuite()
    {
        delete dir_;
        dir_ = nullptr;
    }
    static fs::path data() { return dir_->path() / "data"; }
    static fs::path out(const std::string& name) { return dir_->path() / name; }

    static testutil::TempDir* dir_;
};

testutil::TempDir* PipelineFixture::dir_ = nullptr;

}  // namespace

TEST(Manifest, RoundTrip)
{
    testutil::TempDir d("man");
    const std::vector<ManifestRow> rows{{"a", "optimal", 115.3, 412.5, "train"}, {"b", "sub-optimal", 0.1, std::nullopt, "test"}};
    write_text(d.path() / "m.csv", manifest_csv(rows));
    const auto m = read_manifest(d.path() / "m.csv");
    ASSERT_EQ(m.size(), 2u);
    EXPECT_DOUBLE_EQ(m.at("a").reading_cm, 115.3);
    EXPECT_DOUBLE_EQ(*m.at("a").waterline_row, 412.5);
    EXPECT_FALSE(m.at("b").waterline_row.has_value());
    EXPECT_EQ(m.at("b").split, "test");

    write_text(d.path() / "bad.csv", "id,reading_cm\na,1\n");
    EXPECT_THROW(read_manifest(d.path() / "bad.csv"), ImageIoError);
    write_text(d.path() / "nan.csv", "id,quality,reading_cm\na,optimal,abc\n");
    EXPECT_THROW(read_manifest(d.path() / "nan.csv"), ImageIoError);
}

TEST(Config, JsonKeysAndUnknownKey)
{
    PipelineConfig c;
    apply_config_json(c, nlohmann::json::parse(R"({"input_dir":"x","llm_stages":2,"waterline_threshold":0.3,
        "deskew":false,"deskew_min_len":120,"workers":3,"model_tag":"gpt"})"));
    EXPECT_EQ(c.input_dir, "x");
    EXPECT_EQ(c.llm, LlmStages::stage2);
    EXPECT_DOUBLE_EQ(c.waterline_threshold, 0.3);
    EXPECT_FALSE(c.deskew_enabled);
    EXPECT_DOUBLE_EQ(c.deskew.min_len, 120);
    EXPECT_EQ(c.workers, 3);
    EXPECT_EQ(c.model_tag, "gpt");
    EXPECT_THROW(apply_config_json(c, nlohmann::json::parse(R"({"thresh":0.2})")), std::invalid_argument);
    EXPECT_THROW(apply_config_json(c, nlohmann::json::parse("[1]")), std::invalid_argument);
    EXPECT_THROW(llm_stages_from_string("3"), std::invalid_argument);
    for (auto s : {LlmStages::none, LlmStages::stage1, LlmStages::stage2, LlmStages::both})
        EXPECT_EQ(llm_stages_from_string(to_string(s)), s);
}

TEST(Pipeline, EmptyInputExitsNonzero)
{
    testutil::TempDir d("empty");
    fs::create_directories(d.path() / "in");
    auto c = config_for(d.path() / "in", d.path() / "out");
    c.detector = "classical";
    std::ostringstream log;
    const auto s = run_pipeline(c, log);
    EXPECT_EQ(s.exit, ExitCode::all_failed);
    EXPECT_EQ(s.total, 0u);
    EXPECT_TRUE(read_text(c.records_path()).empty());
}

TEST(Pipeline, MissingInputIsAnIoError)
{
    auto c = config_for("/nonexistent/input/dir", "/tmp/unused");
    EXPECT_THROW(c.validate(), ImageIoError);
}

TEST_F(PipelineFixture, GeneratedLayout)
{
    for (const char* f : {"manifest.csv", "detections.json"}) EXPECT_TRUE(fs::exists(data() / f)) << f;
    EXPECT_EQ(list_images(data() / "images").size(), 8u);
    EXPECT_EQ(read_manifest(data() / "manifest.csv").size(), 8u);
    EXPECT_EQ(read_detections(data() / "detections.json").size(), 8u);
    EXPECT_TRUE(fs::exists(data() / "labels" / "g00000.txt"));
    EXPECT_TRUE(fs::exists(data() / "truth" / "g00000.json"));
}

TEST_F(PipelineFixture, StageTwoMockEqualsGeometricReading)
{
    const auto c = config_for(data(), out("both"), LlmStages::both);
    std::ostringstream log;
    const auto s = run_pipeline(c, log);
    EXPECT_EQ(s.total, 8u);
    EXPECT_EQ(s.exit, ExitCode::ok);
    const auto recs = load_records(c.records_path());
    ASSERT_EQ(recs.size(), 8u);
    const auto manifest = read_manifest(data() / "manifest.csv");
    int compared = 0;
    for (const auto& r : recs) {
        ASSERT_EQ(r.llm.size(), 2u) << r.image_id;
        EXPECT_EQ(r.llm[0].stage, 1);
        EXPECT_EQ(r.llm[1].stage, 2);
        if (!r.reading_geometric_cm) continue;
        ASSERT_TRUE(r.llm[1].reading_cm.has_value()) << r.image_id;
        EXPECT_EQ(*r.llm[1].reading_cm, *r.reading_geometric_cm) << r.image_id;
        if (manifest.at(r.image_id).quality == "optimal") {
            EXPECT_LE(std::abs(*r.reading_geometric_cm - manifest.at(r.image_id).reading_cm), 1.0) << r.image_id;
        }
        ++compared;
    }
    EXPECT_GE(compared, 5);
}

TEST_F(PipelineFixture, RerunIsByteIdentical)
{
    const auto a = config_for(data(), out("rerun_a"), LlmStages::both);
    auto b = config_for(data(), out("rerun_b"), LlmStages::both);
    b.workers = 3;
    std::ostringstream log;
    run_pipeline(a, log);
    run_pipeline(b, log);
    EXPECT_EQ(read_text(a.records_path()), read_text(b.records_path()));

    run_eval(a.records_path(), data() / "manifest.csv", out("rep_a"), {}, log);
    run_eval(b.records_path(), data() / "manifest.csv", out("rep_b"), {}, log);
    for (const char* f : {"report.csv", "report.json", "heatmap.csv"})
        EXPECT_EQ(read_text(out("rep_a") / f), read_text(out("rep_b") / f)) << f;

    // Second pass over the same output is served from the response cache.
    run_pipeline(a, log);
    EXPECT_EQ(read_text(a.records_path()), read_text(b.records_path()));
    bool cache_hits = false;
    for (const auto& j : read_jsonl(a.timings_path()))
        for (const auto& [k, v] : j.at("llm").items()) cache_hits |= v.at("attempts").get<int>() == 0;
    EXPECT_TRUE(cache_hits);
}

TEST_F(PipelineFixture, ResumeSkipsFinishedIds)
{
    const auto full = config_for(data(), out("resume_full"));
    std::ostringstream log;
    run_pipeline(full, log);

    auto part = config_for(data(), out("resume_part"));
    fs::create_directories(part.output_dir);
    // Simulate an interrupted run: five records written, the last one torn.
    const auto lines = read_jsonl(full.records_path());
    std::string head;
    for (int i = 0; i < 5; ++i) head += lines[i].dump() + "\n";
    head += "{\"image_id\": \"g000";
    write_text(part.records_path(), head);
    part.resume = true;
    const auto s = run_pipeline(part, log);
    EXPECT_EQ(s.skipped, 5u);
    EXPECT_EQ(s.processed, 3u);
    EXPECT_EQ(s.total, 8u);
    EXPECT_EQ(read_text(part.records_path()), read_text(full.records_path()));
}

TEST_F(PipelineFixture, EvalReportsGeometricAndModelRows)
{
    const auto c = config_for(data(), out("eval_src"), LlmStages::both);
    std::ostringstream log;
    run_pipeline(c, log);
    const auto rep = run_eval(c.records_path(), data() / "manifest.csv", out("eval_rep"), {}, log);
    ASSERT_EQ(rep.rows.size(), 9u);
    EXPECT_EQ(rep.rows[0].model, "geometric");
    EXPECT_EQ(rep.rows[0].stage, 0);
    EXPECT_EQ(rep.rows[0].n_records, 8u);
    EXPECT_EQ(rep.rows[3].model, "mock");
    EXPECT_EQ(rep.rows[3].stage, 1);
    EXPECT_EQ(rep.rows[6].stage, 2);
    // Rejected images are rejections for every stage, not silent drops.
    EXPECT_EQ(rep.rows[0].n_rejected, rep.rows[6].n_rejected);
    EXPECT_EQ(rep.confusion.tp + rep.confusion.fn, 8u);
    const std::string csv = read_text(out("eval_rep") / "report.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), kReportHeader);
}

TEST_F(PipelineFixture, CorruptImageBecomesErrorRecord)
{
    testutil::TempDir d("corrupt");
    fs::create_directories(d.path() / "images");
    fs::copy_file(data() / "images" / "g00000.png", d.path() / "images" / "g00000.png");
    write_text(d.path() / "images" / "g00001.png", "not a png");
    fs::copy_file(data() / "detections.json", d.path() / "detections.json");
    auto c = config_for(d.path(), d.path() / "out");
    std::ostringstream log;
    const auto s = run_pipeline(c, log);
    EXPECT_EQ(s.total, 2u);
    EXPECT_EQ(s.failed, 1u);
    EXPECT_EQ(s.exit, ExitCode::ok);
    const auto recs = load_records(c.records_path());
    EXPECT_FALSE(recs[1].ok());

    fs::remove(d.path() / "images" / "g00000.png");
    c.output_dir = d.path() / "out2";
    EXPECT_EQ(run_pipeline(c, log).exit, ExitCode::all_failed);
}

TEST_F(PipelineFixture, RecordJsonRoundTrip)
{
    const auto c = config_for(data(), out("rt"), LlmStages::both);
    std::ostringstream log;
    run_pipeline(c, log);
    for (const auto& j : read_jsonl(c.records_path())) EXPECT_EQ(to_json(run_record_from_json(j)), j);
}

TEST_F(PipelineFixture, CliEndToEnd)
{
    const std::string d = data().string();
    const std::string o = out("cli").string();
    EXPECT_EQ(run_cli("run --input " + d + " --output " + o + " --llm-stages 2"), 0);
    EXPECT_EQ(run_cli("eval --records " + o + "/records.jsonl --manifest " + d + "/manifest.csv --out " + o + "/report"), 0);
    EXPECT_TRUE(fs::exists(out("cli") / "report" / "report.csv"));

    write_text(out("cli.json"), R"({"input_dir":")" + d + R"(","output_dir":")" + o + R"(2","llm_stages":"1"})");
    EXPECT_EQ(run_cli("run --config " + out("cli.json").string()), 0);
    EXPECT_EQ(load_records(out("cli2") / "records.jsonl").at(0).llm.at(0).stage, 1);

    write_text(out("bad.json"), R"({"nope":1})");
    EXPECT_EQ(run_cli("run --config " + out("bad.json").string()), 1);
    EXPECT_EQ(run_cli("run --input " + d + " --llm-stages 7 --output " + o), 1);
    EXPECT_EQ(run_cli("frobnicate"), 1);
    EXPECT_EQ(run_cli("run --input /nonexistent/dir --output " + o), 2);
    EXPECT_EQ(run_cli("eval --records /nonexistent.jsonl --manifest " + d + "/manifest.csv"), 2);
    fs::create_directories(out("empty_in"));
    EXPECT_EQ(run_cli("run --input " + out("empty_in").string() + " --detector classical --output " + o + "3"), 3);
}
