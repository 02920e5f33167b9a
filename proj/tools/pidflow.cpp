// pidflow: command-line front end for layer-wise PID analysis.
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pidflow/analysis.hpp"
#include "pidflow/discrete_pid.hpp"
#include "pidflow/error.hpp"
#include "pidflow/pipeline.hpp"
#include "pidflow/store.hpp"
#include "pidflow/synth.hpp"
#include "pidflow/trajectory.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pidflow;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitOther = 1;
constexpr int kExitValidation = 2;
constexpr int kExitNumeric = 3;

struct SynthArgs {
    std::string script;
    std::string out;
    std::uint64_t seed = 42;
    bool print_script = false;
    std::string discrete;
};

struct RunArgs {
    std::string config;
    std::string baseline;
    std::string knockout;
    std::string out;
    std::string profile;
    std::optional<std::uint64_t> seed;
    std::vector<int> dprime;
    bool reuse_flows = false;
    std::optional<unsigned> threads;
    std::optional<int> steps;
    std::optional<int> bootstrap;
    bool no_flows = false;
};

struct ThresholdArgs {
    std::string file;
    std::optional<double> tau_s, gamma, eta, rho;
    std::optional<int> ell0, smoothing;
};

void add_threshold_options(CLI::App* cmd, ThresholdArgs& t)
{
    cmd->add_option("--thresholds", t.file, "JSON file with threshold overrides")->check(CLI::ExistingFile);
    cmd->add_option("--tau-s", t.tau_s, "synergy floor in bits (default 0.5)");
    cmd->add_option("--gamma", t.gamma, "synergy share threshold (default 0.15)");
    cmd->add_option("--eta", t.eta, "language-unique share threshold (default 0.45)");
    cmd->add_option("--rho", t.rho, "redundancy margin (default 1.5)");
    cmd->add_option("--ell0", t.ell0, "reference layer for redundancy growth (default 0)");
    cmd->add_option("--smoothing", t.smoothing, "odd moving-average window (default 3)");
}

ThresholdConfig thresholds_from(const ThresholdArgs& t)
{
    ThresholdConfig c;
    if (!t.file.empty()) c = thresholds_from_json(json::parse(read_text_file(t.file)));
    if (t.tau_s) c.tau_s = *t.tau_s;
    if (t.gamma) c.gamma = *t.gamma;
    if (t.eta) c.eta = *t.eta;
    if (t.rho) c.rho = *t.rho;
    if (t.ell0) c.ell0 = *t.ell0;
    if (t.smoothing) c.smoothing_window = *t.smoothing;
    validate(c);
    return c;
}

RegimeScript resolve_script(const std::string& s)
{
    for (Regime r : {Regime::transduction, Regime::persistent_synergy, Regime::redundancy_dominant}) {
        if (s == to_string(r)) return canonical_script(r);
    }
    return load_regime_script(s);
}

int cmd_synth(const SynthArgs& a)
{
    if (!a.discrete.empty()) {
        const auto pmf = gen_discrete_system(parse_discrete_system(a.discrete));
        const DiscretePid p = discrete_pid_brute(pmf);
        json rows = json::array();
        for (int x1 = 0; x1 < pmf.n1; ++x1) {
            for (int x2 = 0; x2 < pmf.n2; ++x2) {
                for (int y = 0; y < pmf.ny; ++y) {
                    const Rational& q = pmf.at(x1, x2, y);
                    if (q != Rational(0)) {
                        rows.push_back({{"x1", x1}, {"x2", x2}, {"y", y},
                                        {"p", std::to_string(q.numerator()) + "/" + std::to_string(q.denominator())}});
                    }
                }
            }
        }
        std::cout << json{{"system", a.discrete}, {"pmf", rows},
                          {"pid_bits", {{"R", p.r}, {"U1", p.u1}, {"U2", p.u2}, {"S", p.s}, {"I_joint", p.i_joint}}}}
                         .dump(2)
                  << "\n";
        return kExitOk;
    }
    if (a.script.empty()) throw ValidationError("synth: --script or --discrete is required");
    const RegimeScript script = resolve_script(a.script);
    if (a.print_script) {
        std::cout << to_json(script).dump(2) << "\n";
        return kExitOk;
    }
    if (a.out.empty()) throw ValidationError("synth: --out is required");
    const ActivationStore store = gen_regime_dataset(script, a.seed);
    write_store(store, a.out);
    std::cout << "wrote " << script.layers << "-layer " << to_string(script.regime) << " store to " << a.out << "\n";
    return kExitOk;
}

int cmd_validate(const std::vector<std::string>& stores)
{
    bool all_ok = true;
    for (const auto& s : stores) {
        const ValidationReport r = validate_store(s);
        if (r.ok()) {
            std::cout << s << ": ok\n";
            continue;
        }
        all_ok = false;
        std::cout << s << ": " << r.violations.size() << " violation(s)\n";
        for (const auto& v : r.violations) {
            std::cout << "  [" << to_string(v.kind) << "]";
            if (v.layer >= 0) std::cout << " layer " << v.layer;
            if (!v.field.empty()) std::cout << " (" << v.field << ")";
            std::cout << ": " << v.message << "\n";
        }
    }
    return all_ok ? kExitOk : kExitValidation;
}

int cmd_run(const RunArgs& a)
{
    PipelineConfig cfg;
    if (!a.config.empty()) {
        const fs::path path(a.config);
        cfg = pipeline_config_from_json(json::parse(read_text_file(path)), path.parent_path());
    } else {
        cfg = default_pipeline_config(a.profile.empty() ? Profile::test : parse_profile(a.profile));
    }
    if (!a.profile.empty() && !a.config.empty()) {
        const Profile p = parse_profile(a.profile);
        if (p != cfg.profile) {
            const PipelineConfig d = default_pipeline_config(p);
            cfg.profile = p;
            cfg.train = d.train;
            cfg.num_blocks = d.num_blocks;
            cfg.hidden_dim = d.hidden_dim;
        }
    }
    if (!a.baseline.empty()) cfg.baseline_store = a.baseline;
    if (!a.knockout.empty()) cfg.knockout_store = fs::path(a.knockout);
    if (!a.out.empty()) cfg.output_dir = a.out;
    if (cfg.baseline_store.empty()) throw ValidationError("run: a baseline store is required (--baseline or config)");
    if (cfg.output_dir.empty()) throw ValidationError("run: an output directory is required (--out or config)");
    if (a.seed) cfg.base_seed = *a.seed;
    if (!a.dprime.empty()) cfg.dprime_overrides = a.dprime;
    if (a.reuse_flows) cfg.reuse_flows = true;
    if (a.threads) cfg.threads = *a.threads;
    if (a.bootstrap) cfg.bootstrap_resamples = *a.bootstrap;
    if (a.no_flows) cfg.save_flows = false;
    if (a.steps) {
        if (cfg.profile == Profile::paper) throw ValidationError("run: the paper profile pins the step count");
        cfg.train.steps = *a.steps;
    }

    const PipelineResult r = run_pipeline(cfg);
    const auto& b = r.main.baseline;
    std::cout << "profile: " << to_string(cfg.profile) << "\n";
    std::cout << final_layer_summary(b.trajectory);
    if (b.mechanism) {
        std::cout << "mechanism: " << to_string(b.mechanism->primary_label);
        if (b.mechanism->ambiguous) std::cout << " (ambiguous)";
    } else {
        std::cout << "mechanism: unclassified (" << b.classification_note << ")";
    }
    std::cout << "\n";
    if (r.main.knockout_report) {
        const auto& k = *r.main.knockout_report;
        std::cout << "knockout: Dep = ";
        if (k.dep) {
            std::cout << k.dep->value << "%" << (k.dep->partial ? " (partial)" : "");
        } else {
            std::cout << "undefined";
        }
        std::cout << ", P1 " << to_string(k.predictions.p1) << ", P2 " << to_string(k.predictions.p2) << ", P3 "
                  << to_string(k.predictions.p3) << "\n";
    }
    std::cout << "run directory: " << r.run_dir.string() << "\n";
    return kExitOk;
}

int cmd_classify(const std::string& path, const ThresholdArgs& t, bool sweep)
{
    const Trajectory traj = load_trajectory(path);
    const ThresholdConfig cfg = thresholds_from(t);
    const MechanismReport rep = classify_mechanism(traj, cfg);
    json out = {{"mechanism", to_json(rep)}, {"turning_points", to_json(rep.turning_points)}};
    if (sweep) {
        SweepGrid grid;
        grid.gamma = {cfg.gamma - 0.05, cfg.gamma, cfg.gamma + 0.05};
        grid.eta = {cfg.eta - 0.05, cfg.eta, cfg.eta + 0.05};
        grid.rho = {cfg.rho - 0.25, cfg.rho, cfg.rho + 0.25};
        out["sweep"] = to_json(threshold_sweep(traj, grid, cfg));
    }
    std::cout << out.dump(2) << "\n";
    return kExitOk;
}

int cmd_compare(const std::string& a, const std::string& b, const ThresholdArgs& t)
{
    const ComparisonReport r = compare_trajectories(load_trajectory(a), load_trajectory(b), thresholds_from(t));
    std::cout << to_json(r).dump(2) << "\n";
    return kExitOk;
}

int cmd_knockout(const std::string& base, const std::string& ko, bool csv)
{
    const Trajectory b = load_trajectory(base);
    const Trajectory k = load_trajectory(ko);
    const KnockoutReport r = knockout_deltas(b, k);
    if (csv) {
        std::cout << knockout_report_csv(r, b, k);
    } else {
        std::cout << to_json(r).dump(2) << "\n";
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"pidflow: layer-wise partial information decomposition of multimodal activations.\n"
                 "Exit codes: 0 success, 1 other error, 2 validation failure, 3 numeric failure.\n"
                 "Environment: PIDFLOW_THREADS overrides the worker thread count."};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kPidflowVersion));

    SynthArgs synth;
    auto* c_synth = app.add_subcommand("synth", "Generate a synthetic store from a regime script, or a discrete system");
    c_synth->add_option("--script", synth.script,
                        "regime script JSON, or a canonical name: transduction, persistent_synergy, redundancy_dominant");
    c_synth->add_option("--out", synth.out, "output store directory");
    c_synth->add_option("--seed", synth.seed, "generator seed (default 42)");
    c_synth->add_flag("--print-script", synth.print_script, "print the resolved script as JSON and exit");
    c_synth->add_option("--discrete", synth.discrete, "print a discrete system and its PID: xor, and, copy, unique1");

    std::vector<std::string> stores;
    auto* c_validate = app.add_subcommand("validate", "Check stores against the on-disk format; lists every violation");
    c_validate->add_option("stores", stores, "store directories")->required();

    RunArgs run;
    auto* c_run = app.add_subcommand("run", "Run pooling -> PCA -> flows -> PID -> classification (and knockout)");
    c_run->add_option("--config", run.config, "pipeline config JSON")->check(CLI::ExistingFile);
    c_run->add_option("--baseline", run.baseline, "baseline store directory");
    c_run->add_option("--knockout", run.knockout, "knockout store directory");
    c_run->add_option("--out", run.out, "run directory");
    c_run->add_option("--profile", run.profile, "hyperparameter profile: test (default) or paper");
    c_run->add_option("--seed", run.seed, "base seed (default 42)");
    c_run->add_option("--dprime", run.dprime, "extra runs with a fixed PCA dimension, e.g. --dprime 16 32 64");
    c_run->add_flag("--reuse-flows", run.reuse_flows, "reuse baseline flows for the knockout condition");
    c_run->add_option("--threads", run.threads, "worker threads (default: PIDFLOW_THREADS or all cores)");
    c_run->add_option("--steps", run.steps, "override training steps (test profile only)");
    c_run->add_option("--bootstrap", run.bootstrap, "bootstrap resamples for knockout CIs (default 1000)");
    c_run->add_flag("--no-flows", run.no_flows, "do not write trained flows");

    std::string traj_path;
    ThresholdArgs classify_t;
    bool sweep = false;
    auto* c_classify = app.add_subcommand("classify", "Detect turning points and classify the mechanism of a trajectory");
    c_classify->add_option("trajectory", traj_path, "trajectory .csv or .json")->required()->check(CLI::ExistingFile);
    add_threshold_options(c_classify, classify_t);
    c_classify->add_flag("--sweep", sweep, "also run a 3x3x3 sweep over gamma, eta, rho around the thresholds");

    std::string cmp_a, cmp_b;
    ThresholdArgs compare_t;
    auto* c_compare = app.add_subcommand("compare", "Pearson r, nMAE and landmark offsets between two trajectories");
    c_compare->add_option("a", cmp_a, "reference trajectory")->required()->check(CLI::ExistingFile);
    c_compare->add_option("b", cmp_b, "compared trajectory")->required()->check(CLI::ExistingFile);
    add_threshold_options(c_compare, compare_t);

    std::string ko_base, ko_ko;
    bool ko_csv = false;
    auto* c_knockout = app.add_subcommand("knockout", "Knockout deltas, dependence score and P1-P3 verdicts");
    c_knockout->add_option("base", ko_base, "baseline trajectory")->required()->check(CLI::ExistingFile);
    c_knockout->add_option("knockout", ko_ko, "knockout trajectory")->required()->check(CLI::ExistingFile);
    c_knockout->add_flag("--csv", ko_csv, "print the flat per-layer table instead of JSON");

    std::string report_dir, report_format = "csv";
    auto* c_report = app.add_subcommand("report", "Write report files for a completed run directory");
    c_report->add_option("run_dir", report_dir, "run directory")->required();
    c_report->add_option("--format", report_format, "csv, json or plotdata")->check(CLI::IsMember({"csv", "json", "plotdata"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitValidation;
    }

    try {
        if (*c_synth) return cmd_synth(synth);
        if (*c_validate) return cmd_validate(stores);
        if (*c_run) return cmd_run(run);
        if (*c_classify) return cmd_classify(traj_path, classify_t, sweep);
        if (*c_compare) return cmd_compare(cmp_a, cmp_b, compare_t);
        if (*c_knockout) return cmd_knockout(ko_base, ko_ko, ko_csv);
        if (*c_report) {
            std::cout << write_report(report_dir, parse_report_format(report_format)).string() << "\n";
            return kExitOk;
        }
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitOther;
    }
    return kExitOther;
}
