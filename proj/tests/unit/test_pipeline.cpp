#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "pidflow/error.hpp"
#include "pidflow/pipeline.hpp"
#include "pidflow/synth.hpp"
#include "test_support.hpp"

using namespace pidflow;
using test::TempDir;
namespace fs = std::filesystem;

namespace {

RegimeScript short_script(const fs::path& file, int layers, int samples)
{
    auto s = load_regime_script(file);
    s.layers = layers;
    s.profile.resize(static_cast<std::size_t>(layers));
    s.samples = samples;
    return s;
}

PipelineConfig quick_config(const fs::path& base, const fs::path& out)
{
    PipelineConfig c = default_pipeline_config(Profile::test);
    c.baseline_store = base;
    c.output_dir = out;
    c.train.steps = 150;
    c.hidden_dim = 16;
    c.num_blocks = 2;
    c.threads = 1;
    c.bootstrap_resamples = 20;
    return c;
}

int line_count(const fs::path& p)
{
    std::ifstream in(p);
    int n = 0;
    for (std::string line; std::getline(in, line);) ++n;
    return n;
}

}  // namespace

TEST_CASE("single-layer estimate tracks ground truth")
{
    GaussianLayerSpec spec;
    spec.cov = triplet_covariance(ScalarTriplet{0.5, 0.9, 0.45});
    spec.n = 20000;
    spec.seed = 3;
    const auto data = gen_gaussian_layer(spec);
    EstimatorSettings settings;
    settings.flow.train.steps = 300;
    const auto est = estimate_layer(data.x_v, data.x_l, data.y, 0, settings);
    const auto truth = ground_truth_pid(spec);
    CHECK(est.state.r == doctest::Approx(truth.r).epsilon(0.1));
    CHECK(est.state.u_l == doctest::Approx(truth.u_l).epsilon(0.1));
    CHECK(est.state.u_v < 0.05);
    CHECK(est.pca_language.d_prime == 1);
    CHECK(est.z_q.rows() == spec.n);
    CHECK(est.zy_discrepancy >= 0.0);
}

TEST_CASE("missing store fails before any compute")
{
    TempDir dir;
    PipelineConfig c = quick_config(dir / "absent", dir / "out");
    CHECK_THROWS_AS(run_pipeline(c), IoError);
    CHECK_FALSE(fs::exists(dir / "out"));
}

TEST_CASE("baseline run writes a complete directory")
{
    TempDir dir;
    write_store(gen_regime_dataset(short_script(test::fixture_path("regimes/persistent_synergy.json"), 6, 600), 42),
                dir / "store");
    const auto c = quick_config(dir / "store", dir / "run");
    const auto result = run_pipeline(c);
    const fs::path run = dir / "run";
    CHECK(line_count(run / "trajectory.csv") == 7);
    for (const char* f : {"trajectory.json", "diagnostics.csv", "run_manifest.json", "summary.txt",
                          "pca/pca_0_language.json", "pca/pca_5_vision.json", "flows/flow_0_language.bin"}) {
        CAPTURE(f);
        CHECK(fs::exists(run / f));
    }
    CHECK(result.main.baseline.trajectory.num_layers() == 6);
    REQUIRE(result.main.baseline.mechanism.has_value());
    CHECK(result.main.baseline.mechanism->primary_label == Mechanism::persistent_synergy);

    const auto manifest = nlohmann::json::parse(read_text_file(run / "run_manifest.json"));
    CHECK(manifest.at("profile") == "test");
    CHECK(manifest.at("seeds").at("flows").size() == 6);

    const auto plot = write_report(run, ReportFormat::plotdata);
    CHECK(line_count(plot) == 1 + 6 * 4);
    const auto csv = write_report(run, ReportFormat::csv);
    const std::string first = read_text_file(csv);
    write_report(run, ReportFormat::csv);
    CHECK(read_text_file(csv) == first);
}

TEST_CASE("knockout pair produces a report")
{
    TempDir dir;
    write_store(gen_regime_dataset(short_script(test::fixture_path("knockout/base.json"), 6, 1500), 42), dir / "base");
    write_store(gen_regime_dataset(short_script(test::fixture_path("knockout/knockout.json"), 6, 1500), 42), dir / "ko");
    auto c = quick_config(dir / "base", dir / "run");
    c.knockout_store = dir / "ko";
    const auto result = run_pipeline(c);
    REQUIRE(result.main.knockout_report.has_value());
    const auto& rep = *result.main.knockout_report;
    CHECK(rep.predictions.p1 == Verdict::confirmed);
    CHECK(rep.final_delta(Component::u_v).value > 0.0);
    CHECK(rep.stats[1].final_delta_ci.has_value());
    CHECK(fs::exists(dir / "run" / "knockout_report.csv"));
    CHECK(fs::exists(dir / "run" / "flows" / "flow_0_vision_knockout.bin"));

    const auto plot = write_report(dir / "run", ReportFormat::plotdata);
    CHECK(line_count(plot) == 1 + 2 * 6 * 4);
    const auto j = nlohmann::json::parse(read_text_file(write_report(dir / "run", ReportFormat::json)));
    CHECK(j.contains("dep_score"));
    CHECK(j.at("predictions").size() == 3);
    CHECK(j.contains("comparison"));
}

TEST_CASE("mismatched knockout store is rejected")
{
    TempDir dir;
    const auto script = short_script(test::fixture_path("knockout/base.json"), 5, 300);
    write_store(gen_regime_dataset(script, 1), dir / "base");
    auto ko = short_script(test::fixture_path("knockout/knockout.json"), 5, 300);
    write_store(gen_regime_dataset(ko, 2), dir / "ko");
    auto c = quick_config(dir / "base", dir / "run");
    c.knockout_store = dir / "ko";
    CHECK_THROWS_WITH_AS(run_pipeline(c), doctest::Contains("sample"), ValidationError);
}

TEST_CASE("short trajectories are written without a classification")
{
    TempDir dir;
    write_store(gen_regime_dataset(short_script(test::fixture_path("regimes/redundancy_dominant.json"), 3, 400), 42),
                dir / "store");
    auto c = quick_config(dir / "store", dir / "run");
    c.save_flows = false;
    const auto result = run_pipeline(c);
    CHECK_FALSE(result.main.baseline.mechanism.has_value());
    CHECK(result.main.baseline.classification_note.find("5 layers") != std::string::npos);
    const auto j = nlohmann::json::parse(read_text_file(dir / "run" / "trajectory.json"));
    CHECK(j.at("mechanism").is_null());
    CHECK_FALSE(fs::exists(dir / "run" / "flows"));
}

TEST_CASE("incomplete run directory")
{
    TempDir dir;
    fs::create_directories(dir / "run");
    CHECK_THROWS_AS(write_report(dir / "run", ReportFormat::csv), ValidationError);
}

TEST_CASE("config parsing")
{
    const auto c = pipeline_config_from_json(
        nlohmann::json{{"baseline_store", "data/base"}, {"output_dir", "/abs/out"}, {"train", {{"steps", 10}}}}, "/root");
    CHECK(c.baseline_store == fs::path("/root/data/base"));
    CHECK(c.output_dir == fs::path("/abs/out"));
    CHECK(c.train.steps == 10);
    CHECK(c.profile == Profile::test);

    CHECK_THROWS_AS(pipeline_config_from_json(nlohmann::json{{"baseline_store", "b"}, {"stepz", 1}}), ValidationError);
    CHECK_THROWS_AS(pipeline_config_from_json(
                        nlohmann::json{{"baseline_store", "b"}, {"profile", "paper"}, {"train", {{"steps", 10}}}}),
                    ValidationError);
    const auto paper = pipeline_config_from_json(nlohmann::json{{"baseline_store", "b"}, {"profile", "paper"}});
    CHECK(paper.train.steps == 10000);
    CHECK(paper.hidden_dim == 256);
    CHECK(to_json(paper).at("profile") == "paper");
}
