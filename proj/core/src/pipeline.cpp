#include "pidflow/pipeline.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <boost/random/mersenne_twister.hpp>
#include <boost/random/uniform_real_distribution.hpp>

#include "pidflow/error.hpp"
#include "pidflow/flow.hpp"
#include "pidflow/seed.hpp"

namespace fs = std::filesystem;

namespace pidflow {

using nlohmann::json;

namespace {

std::string fmt(const char* f, double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string g9(double v) { return fmt("%.9g", v); }

Matrix hstack(const Matrix& a, const Vector& b)
{
    Matrix out(a.rows(), a.cols() + 1);
    out << a, b;
    return out;
}

FlowModel fit_or_reuse(const Matrix& data, int coupled, const EstimatorSettings& s, std::uint64_t seed,
                       const FlowModel* reuse, std::vector<std::string>& warnings)
{
    if (reuse) {
        if (reuse->arch.input_dim != data.cols()) {
            throw ValidationError("reused flow expects " + std::to_string(reuse->arch.input_dim) + " inputs, got " +
                                  std::to_string(data.cols()));
        }
        return *reuse;
    }
    FlowArchitecture arch{static_cast<int>(data.cols()), coupled, s.flow.num_blocks, s.flow.hidden_dim};
    TrainConfig tc = s.flow.train;
    tc.seed = seed;
    TrainResult r = train_flow(data, tc, arch);
    for (auto& w : r.warnings) warnings.push_back(std::move(w));
    return std::move(r.model);
}

// Runs fn(l) for l in [0, count) on `threads` workers. The first failure (by
// layer order) is rethrown after all workers stop.
template <typename Fn>
void parallel_layers(int count, unsigned threads, Fn&& fn)
{
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(count));
    std::atomic<int> next{0};
    auto worker = [&] {
        for (int l = next++; l < count; l = next++) {
            try {
                fn(l);
            } catch (...) {
                errors[static_cast<std::size_t>(l)] = std::current_exception();
            }
        }
    };
    const unsigned n = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(count)));
    if (n == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace

LayerEstimate estimate_layer(const Matrix& x_v, const Matrix& x_l, const Vector& y, int layer,
                             const EstimatorSettings& s, const LayerReuse& reuse)
{
    const Eigen::Index n = y.size();
    if (x_v.rows() != n || x_l.rows() != n) {
        throw ValidationError("layer " + std::to_string(layer) + ": activations and target differ in length");
    }
    LayerEstimate est;
    Matrix p_v, p_l;
    try {
        est.pca_language = reuse.pca_language ? *reuse.pca_language : fit_pca(x_l, s.pca);
        p_l = apply_pca(est.pca_language, x_l);
    } catch (...) {
        rethrow_with_context("layer " + std::to_string(layer) + ", language PCA");
    }
    try {
        est.pca_vision = reuse.pca_vision ? *reuse.pca_vision : fit_pca(x_v, s.pca);
        p_v = apply_pca(est.pca_vision, x_v);
    } catch (...) {
        rethrow_with_context("layer " + std::to_string(layer) + ", vision PCA");
    }

    Matrix out_l, out_v;
    try {
        const Matrix in = hstack(p_l, y);
        est.flow_language = fit_or_reuse(in, est.pca_language.d_prime, s,
                                          derive_seed(s.base_seed, layer, Modality::language), reuse.flow_language,
                                          est.warnings);
        out_l = flow_transform(est.flow_language, in, Direction::forward).values;
    } catch (...) {
        rethrow_with_context("layer " + std::to_string(layer) + ", language flow");
    }
    try {
        const Matrix in = hstack(p_v, y);
        est.flow_vision = fit_or_reuse(in, est.pca_vision.d_prime, s, derive_seed(s.base_seed, layer, Modality::vision),
                                       reuse.flow_vision, est.warnings);
        out_v = flow_transform(est.flow_vision, in, Direction::forward).values;
    } catch (...) {
        rethrow_with_context("layer " + std::to_string(layer) + ", vision flow");
    }

    const Eigen::Index dq = est.pca_language.d_prime, di = est.pca_vision.d_prime;
    est.z_q = out_l.leftCols(dq);
    est.z_y = out_l.rightCols(1);
    est.z_i = out_v.leftCols(di);
    est.zy_discrepancy = std::sqrt((out_l.col(dq) - out_v.col(di)).squaredNorm() / static_cast<double>(n));

    try {
        est.joint = estimate_joint_cov(est.z_q, est.z_i, est.z_y, s.ridge);
        est.state = decompose_pid_mmi(est.joint, layer);
        Matrix all(n, dq + di + 1);
        all << est.z_q, est.z_i, est.z_y;
        est.diagnostics = n >= 8 ? gaussianity_diagnostics(all) : GaussFitReport{};
    } catch (...) {
        rethrow_with_context("layer " + std::to_string(layer) + ", PID");
    }
    if (est.joint.underdetermined) {
        est.warnings.push_back("fewer samples than latent dimensions; covariance relies on the ridge");
    }
    return est;
}

PipelineConfig default_pipeline_config(Profile profile)
{
    PipelineConfig c;
    const FlowSettings fs_ = profile_settings(profile);
    c.profile = profile;
    c.train = fs_.train;
    c.num_blocks = fs_.num_blocks;
    c.hidden_dim = fs_.hidden_dim;
    return c;
}

PipelineConfig pipeline_config_from_json(const json& j, const fs::path& base_dir)
{
    if (!j.is_object()) throw ValidationError("config: expected a JSON object");
    auto resolve = [&](const std::string& p) {
        fs::path path(p);
        return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
    };
    try {
        const Profile profile = parse_profile(j.value("profile", std::string("test")));
        PipelineConfig c = default_pipeline_config(profile);
        static const std::vector<std::string> known = {
            "baseline_store", "knockout_store", "output_dir", "profile", "retain", "pca_cap", "dprime_overrides",
            "train", "num_blocks", "hidden_dim", "thresholds", "base_seed", "pooling", "ridge", "reuse_flows",
            "bootstrap_resamples", "threads", "save_flows"};
        for (const auto& [k, v] : j.items()) {
            if (std::find(known.begin(), known.end(), k) == known.end()) {
                throw ValidationError("config: unknown key '" + k + "'");
            }
        }
        c.baseline_store = resolve(j.at("baseline_store").get<std::string>());
        if (j.contains("knockout_store") && !j.at("knockout_store").is_null()) {
            c.knockout_store = resolve(j.at("knockout_store").get<std::string>());
        }
        c.output_dir = resolve(j.value("output_dir", std::string("run")));
        c.retain = j.value("retain", c.retain);
        if (j.contains("pca_cap") && !j.at("pca_cap").is_null()) c.pca_cap = j.at("pca_cap").get<int>();
        c.dprime_overrides = j.value("dprime_overrides", std::vector<int>{});
        if (j.contains("train") || j.contains("num_blocks") || j.contains("hidden_dim")) {
            if (profile == Profile::paper) {
                throw ValidationError("config: the paper profile pins training hyperparameters; use profile test to override");
            }
            if (j.contains("train")) {
                const auto& t = j.at("train");
                for (const auto& [k, v] : t.items()) {
                    if (k == "learning_rate") c.train.learning_rate = v.get<double>();
                    else if (k == "batch_size") c.train.batch_size = v.get<int>();
                    else if (k == "steps") c.train.steps = v.get<int>();
                    else if (k == "weight_decay") c.train.weight_decay = v.get<double>();
                    else if (k == "grad_clip") c.train.grad_clip = v.get<double>();
                    else throw ValidationError("config: unknown train key '" + k + "'");
                }
            }
            c.num_blocks = j.value("num_blocks", c.num_blocks);
            c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
        }
        if (j.contains("thresholds")) c.thresholds = thresholds_from_json(j.at("thresholds"));
        c.base_seed = j.value("base_seed", c.base_seed);
        c.pooling = parse_pooling_rule(j.value("pooling", std::string("mean")));
        c.ridge = j.value("ridge", c.ridge);
        c.reuse_flows = j.value("reuse_flows", c.reuse_flows);
        c.bootstrap_resamples = j.value("bootstrap_resamples", c.bootstrap_resamples);
        c.threads = j.value("threads", c.threads);
        c.save_flows = j.value("save_flows", c.save_flows);
        return c;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("config: ") + e.what());
    }
}

json to_json(const PipelineConfig& c)
{
    return json{{"baseline_store", c.baseline_store.string()},
                {"knockout_store", c.knockout_store ? json(c.knockout_store->string()) : json(nullptr)},
                {"output_dir", c.output_dir.string()},
                {"profile", std::string(to_string(c.profile))},
                {"retain", c.retain},
                {"pca_cap", c.pca_cap ? json(*c.pca_cap) : json(nullptr)},
                {"dprime_overrides", c.dprime_overrides},
                {"train",
                 {{"optimizer", "adam"},
                  {"learning_rate", c.train.learning_rate},
                  {"batch_size", c.train.batch_size},
                  {"steps", c.train.steps},
                  {"weight_decay", c.train.weight_decay},
                  {"grad_clip", c.train.grad_clip}}},
                {"num_blocks", c.num_blocks},
                {"hidden_dim", c.hidden_dim},
                {"thresholds", to_json(c.thresholds)},
                {"base_seed", c.base_seed},
                {"pooling", std::string(to_string(c.pooling))},
                {"ridge", c.ridge},
                {"reuse_flows", c.reuse_flows},
                {"bootstrap_resamples", c.bootstrap_resamples},
                {"save_flows", c.save_flows}};
}

std::string read_text_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const fs::path& path, const std::string& text)
{
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

namespace {

struct LoadedStore {
    ActivationStore store;
    std::vector<Matrix> x_v;
    std::vector<Matrix> x_l;
    Vector y;
};

LoadedStore load_inputs(const fs::path& dir, const PipelineConfig& cfg)
{
    LoadedStore ls;
    ls.store = read_store(dir);
    const Manifest& m = ls.store.manifest;
    for (const auto& block : ls.store.layers) {
        if (m.granularity == Granularity::token) {
            ls.x_v.push_back(pool_layer(block, true, cfg.pooling));
            ls.x_l.push_back(pool_layer(block, false, cfg.pooling));
        } else {
            ls.x_v.push_back(block.x_v.cast<double>());
            ls.x_l.push_back(block.x_l.cast<double>());
        }
    }
    const auto yd = ls.store.targets.as_doubles();
    ls.y = Eigen::Map<const Vector>(yd.data(), static_cast<Eigen::Index>(yd.size()));
    if (ls.store.targets.kind == TargetKind::discrete_label) {
        // Dequantize labels so the flow sees a continuous target.
        boost::random::mt19937_64 rng(derive_seed(cfg.base_seed, "dequantize"));
        boost::random::uniform_real_distribution<double> u(0.0, 1.0);
        for (Eigen::Index i = 0; i < ls.y.size(); ++i) ls.y(i) += u(rng);
    }
    return ls;
}

void check_pair(const Manifest& b, const Manifest& k)
{
    if (b.sample_hash != k.sample_hash) {
        throw ValidationError("knockout store sample hash differs from baseline; runs must use identical samples");
    }
    if (b.num_layers != k.num_layers || b.hidden_dim != k.hidden_dim || b.num_samples != k.num_samples) {
        throw ValidationError("knockout store shape differs from baseline");
    }
    if (b.model_id != k.model_id || b.task_id != k.task_id) {
        throw ValidationError("knockout store model/task differs from baseline");
    }
    if (b.condition != Condition::normal || k.condition != Condition::knockout) {
        throw ValidationError("expected a normal baseline store and a knockout store");
    }
}

ConditionRun run_condition(const LoadedStore& in, Condition cond, const EstimatorSettings& settings,
                           std::optional<int> fixed_dim, const ConditionRun* baseline, bool reuse_flows,
                           unsigned threads, const PipelineConfig& cfg)
{
    const int layers = static_cast<int>(in.x_v.size());
    ConditionRun run;
    run.layers.resize(static_cast<std::size_t>(layers));
    parallel_layers(layers, threads, [&](int l) {
        LayerReuse reuse;
        if (baseline) {
            const auto& b = baseline->layers[static_cast<std::size_t>(l)];
            reuse.pca_language = &b.pca_language;
            reuse.pca_vision = &b.pca_vision;
            if (reuse_flows) {
                reuse.flow_language = &b.flow_language;
                reuse.flow_vision = &b.flow_vision;
            }
        }
        run.layers[static_cast<std::size_t>(l)] =
            estimate_layer(in.x_v[static_cast<std::size_t>(l)], in.x_l[static_cast<std::size_t>(l)], in.y, l, settings,
                           reuse);
    });
    std::vector<InfoState> states;
    TrajectoryMeta meta;
    meta.model_id = in.store.manifest.model_id;
    meta.task_id = in.store.manifest.task_id;
    meta.condition = cond;
    meta.d_prime_override = fixed_dim;
    meta.seed = cfg.base_seed;
    meta.profile = std::string(to_string(cfg.profile));
    for (const auto& e : run.layers) {
        states.push_back(e.state);
        meta.d_prime_language.push_back(e.pca_language.d_prime);
        meta.d_prime_vision.push_back(e.pca_vision.d_prime);
    }
    run.trajectory = assemble_trajectory(std::move(states), std::move(meta));
    try {
        run.mechanism = classify_mechanism(run.trajectory, cfg.thresholds);
    } catch (const ValidationError& e) {
        run.classification_note = e.what();
    }
    return run;
}

// Paired row bootstrap of the final-layer deltas: the same resampled rows are
// used for the baseline and knockout latents.
void attach_bootstrap(KnockoutReport& rep, const LayerEstimate& base, const LayerEstimate& ko, double ridge,
                      int resamples, std::uint64_t seed)
{
    const auto n = static_cast<std::size_t>(base.z_q.rows());
    if (resamples <= 0 || n < 2 || static_cast<std::size_t>(ko.z_q.rows()) != n) return;
    auto take = [](const Matrix& m, std::span<const std::size_t> idx) {
        Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
        for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = m.row(static_cast<Eigen::Index>(idx[k]));
        return out;
    };
    for (std::size_t c = 0; c < kAllComponents.size(); ++c) {
        const Component comp = kAllComponents[c];
        rep.stats[c].final_delta_ci = bootstrap_rows(
            n,
            [&](std::span<const std::size_t> idx) {
                try {
                    const InfoState b = decompose_pid_mmi(
                        estimate_joint_cov(take(base.z_q, idx), take(base.z_i, idx), take(base.z_y, idx), ridge));
                    const InfoState k = decompose_pid_mmi(
                        estimate_joint_cov(take(ko.z_q, idx), take(ko.z_i, idx), take(ko.z_y, idx), ridge));
                    const Delta d = relative_delta(component_value(b, comp), component_value(k, comp));
                    return d.defined() ? d.value : std::numeric_limits<double>::quiet_NaN();
                } catch (const Error&) {
                    return std::numeric_limits<double>::quiet_NaN();
                }
            },
            resamples, 0.95, seed);
    }
    rep.bootstrap_resamples = resamples;
}

std::string diagnostics_rows(const ConditionRun& run, const std::string& cond, const std::string& setting)
{
    std::string out;
    for (const auto& e : run.layers) {
        std::string flagged;
        for (int f : e.diagnostics.flagged) flagged += (flagged.empty() ? "" : ";") + std::to_string(f);
        out += cond + "," + setting + "," + std::to_string(e.state.layer) + "," +
               std::to_string(e.pca_language.d_prime) + "," + std::to_string(e.pca_vision.d_prime) + "," +
               g9(e.pca_language.retained_fraction) + "," + g9(e.pca_vision.retained_fraction) + "," +
               (e.pca_language.capped ? "1" : "0") + "," + (e.pca_vision.capped ? "1" : "0") + "," +
               g9(e.flow_language.initial_nll) + "," + g9(e.flow_language.final_nll) + "," +
               (e.flow_language.reverted_to_initial ? "1" : "0") + "," + g9(e.flow_vision.initial_nll) + "," +
               g9(e.flow_vision.final_nll) + "," + (e.flow_vision.reverted_to_initial ? "1" : "0") + "," +
               g9(e.diagnostics.max_abs_skew) + "," + g9(e.diagnostics.max_abs_kurtosis) + "," + flagged + "," +
               g9(e.zy_discrepancy) + "," + g9(e.state.additivity_error()) + "," + g9(e.state.clamp_magnitude) + "," +
               (e.joint.underdetermined ? "1" : "0") + "\n";
    }
    return out;
}

constexpr const char* kDiagnosticsHeader =
    "condition,setting,layer,d_prime_language,d_prime_vision,retained_language,retained_vision,"
    "pca_capped_language,pca_capped_vision,nll_initial_language,nll_final_language,reverted_language,"
    "nll_initial_vision,nll_final_vision,reverted_vision,max_abs_skew,max_abs_excess_kurtosis,flagged_coordinates,"
    "zy_discrepancy_rms,additivity_error,clamp_magnitude_bits,underdetermined\n";

json condition_json(const ConditionRun& run)
{
    if (run.mechanism) return trajectory_to_json(run.trajectory, *run.mechanism);
    json j = trajectory_to_json(run.trajectory, MechanismReport{});
    j["turning_points"] = nullptr;
    j["mechanism"] = nullptr;
    j["classification_note"] = run.classification_note;
    return j;
}

std::string mechanism_label(const ConditionRun& run)
{
    if (!run.mechanism) return "unclassified (" + run.classification_note + ")";
    std::string out(to_string(run.mechanism->primary_label));
    if (run.mechanism->ambiguous) out += " (ambiguous)";
    return out;
}

void write_setting(const fs::path& dir, const SettingRun& s, bool save_flows)
{
    write_text_file(dir / "trajectory.csv", trajectory_to_csv(s.baseline.trajectory));
    write_text_file(dir / "trajectory.json", condition_json(s.baseline).dump(2) + "\n");
    for (const auto& e : s.baseline.layers) {
        const std::string l = std::to_string(e.state.layer);
        write_text_file(dir / "pca" / ("pca_" + l + "_language.json"), pca_to_json(e.pca_language));
        write_text_file(dir / "pca" / ("pca_" + l + "_vision.json"), pca_to_json(e.pca_vision));
    }
    auto flows = [&](const ConditionRun& run, const std::string& suffix) {
        if (!save_flows) return;
        fs::create_directories(dir / "flows");
        for (const auto& e : run.layers) {
            const std::string l = std::to_string(e.state.layer);
            save_flow(e.flow_language, dir / "flows" / ("flow_" + l + "_language" + suffix + ".bin"));
            save_flow(e.flow_vision, dir / "flows" / ("flow_" + l + "_vision" + suffix + ".bin"));
        }
    };
    flows(s.baseline, "");
    if (s.knockout) {
        write_text_file(dir / "trajectory_knockout.csv", trajectory_to_csv(s.knockout->trajectory));
        write_text_file(dir / "trajectory_knockout.json",
                        condition_json(*s.knockout).dump(2) + "\n");
        flows(*s.knockout, "_knockout");
    }
    if (s.knockout_report) {
        write_text_file(dir / "knockout_report.json", to_json(*s.knockout_report).dump(2) + "\n");
        write_text_file(dir / "knockout_report.csv",
                        knockout_report_csv(*s.knockout_report, s.baseline.trajectory, s.knockout->trajectory));
    }
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& cfg)
{
    // Everything that can be checked without computing is checked first.
    if (!fs::is_directory(cfg.baseline_store)) {
        throw IoError("baseline store '" + cfg.baseline_store.string() + "' does not exist");
    }
    if (cfg.knockout_store && !fs::is_directory(*cfg.knockout_store)) {
        throw IoError("knockout store '" + cfg.knockout_store->string() + "' does not exist");
    }
    if (cfg.output_dir.empty()) throw ValidationError("config: output_dir is empty");
    if (!(cfg.retain > 0.0 && cfg.retain <= 1.0)) throw ValidationError("config: retain must be in (0, 1]");
    for (int k : cfg.dprime_overrides) {
        if (k < 1) throw ValidationError("config: d' overrides must be >= 1");
    }
    if (cfg.bootstrap_resamples < 0) throw ValidationError("config: bootstrap_resamples must be >= 0");
    validate(cfg.thresholds);
    if (cfg.profile == Profile::paper) {
        const FlowSettings p = profile_settings(Profile::paper);
        if (!(cfg.train == p.train) || cfg.num_blocks != p.num_blocks || cfg.hidden_dim != p.hidden_dim) {
            throw ValidationError("config: the paper profile pins training hyperparameters");
        }
    }

    const LoadedStore base = load_inputs(cfg.baseline_store, cfg);
    std::optional<LoadedStore> ko;
    if (cfg.knockout_store) {
        ko = load_inputs(*cfg.knockout_store, cfg);
        check_pair(base.store.manifest, ko->store.manifest);
    } else if (base.store.manifest.condition != Condition::normal) {
        throw ValidationError("baseline store has condition '" +
                              std::string(to_string(base.store.manifest.condition)) + "'");
    }

    const unsigned threads = cfg.threads > 0 ? cfg.threads : worker_threads();
    auto run_setting = [&](std::optional<int> fixed_dim) {
        EstimatorSettings es;
        es.pca.retain = cfg.retain;
        es.pca.cap = cfg.pca_cap;
        es.pca.fixed_dim = fixed_dim;
        es.flow.train = cfg.train;
        es.flow.num_blocks = cfg.num_blocks;
        es.flow.hidden_dim = cfg.hidden_dim;
        es.ridge = cfg.ridge;
        es.base_seed = cfg.base_seed;
        SettingRun s;
        s.fixed_dim = fixed_dim;
        s.baseline = run_condition(base, Condition::normal, es, fixed_dim, nullptr, false, threads, cfg);
        if (ko) {
            s.knockout = run_condition(*ko, Condition::knockout, es, fixed_dim, &s.baseline, cfg.reuse_flows, threads, cfg);
            s.knockout_report = knockout_deltas(s.baseline.trajectory, s.knockout->trajectory);
            attach_bootstrap(*s.knockout_report, s.baseline.layers.back(), s.knockout->layers.back(), cfg.ridge,
                             cfg.bootstrap_resamples, derive_seed(cfg.base_seed, "bootstrap"));
        }
        return s;
    };

    PipelineResult result;
    result.run_dir = cfg.output_dir;
    result.main = run_setting(std::nullopt);
    for (int k : cfg.dprime_overrides) result.dprime_runs.push_back(run_setting(k));

    fs::create_directories(cfg.output_dir);
    write_setting(cfg.output_dir, result.main, cfg.save_flows);
    std::string diag = kDiagnosticsHeader;
    auto add_diag = [&](const SettingRun& s) {
        const std::string setting = s.fixed_dim ? "dprime_" + std::to_string(*s.fixed_dim) : "retain";
        diag += diagnostics_rows(s.baseline, "normal", setting);
        if (s.knockout) diag += diagnostics_rows(*s.knockout, "knockout", setting);
    };
    add_diag(result.main);
    for (const auto& s : result.dprime_runs) {
        write_setting(cfg.output_dir / ("dprime_" + std::to_string(*s.fixed_dim)), s, cfg.save_flows);
        add_diag(s);
    }
    write_text_file(cfg.output_dir / "diagnostics.csv", diag);

    json seeds = json::array();
    for (int l = 0; l < base.store.manifest.num_layers; ++l) {
        seeds.push_back({{"layer", l},
                         {"language", derive_seed(cfg.base_seed, l, Modality::language)},
                         {"vision", derive_seed(cfg.base_seed, l, Modality::vision)}});
    }
    std::vector<std::string> warnings;
    auto collect = [&](const ConditionRun& r, const std::string& cond) {
        for (const auto& e : r.layers) {
            for (const auto& w : e.warnings) warnings.push_back(cond + " layer " + std::to_string(e.state.layer) + ": " + w);
        }
        if (!r.mechanism) warnings.push_back(cond + ": classification skipped: " + r.classification_note);
    };
    collect(result.main.baseline, "normal");
    if (result.main.knockout) collect(*result.main.knockout, "knockout");

    json stores = {{"baseline", {{"path", cfg.baseline_store.string()}, {"manifest", json::parse(manifest_to_json(base.store.manifest))}}}};
    if (ko) stores["knockout"] = {{"path", cfg.knockout_store->string()}, {"manifest", json::parse(manifest_to_json(ko->store.manifest))}};
    json settings = json::array();
    settings.push_back("retain");
    for (int k : cfg.dprime_overrides) settings.push_back("dprime_" + std::to_string(k));

    json manifest = {
        {"tool", "pidflow"},
        {"version", kPidflowVersion},
        {"profile", std::string(to_string(cfg.profile))},
        {"config", to_json(cfg)},
        {"stores", stores},
        {"settings", settings},
        {"seeds",
         {{"base_seed", cfg.base_seed},
          {"derivation", "base_seed XOR splitmix64((layer << 8) | modality), modality vision=1 language=2"},
          {"flows", seeds},
          {"bootstrap", derive_seed(cfg.base_seed, "bootstrap")},
          {"dequantize", derive_seed(cfg.base_seed, "dequantize")}}},
        {"decision_parameters",
         {{"units", "bits (estimation in nats)"},
          {"redundancy_rule", "minimum mutual information: R = min(I(Q;Y), I(I;Y))"},
          {"ridge", cfg.ridge},
          {"covariance_estimator", "maximum likelihood (1/n) plus ridge * I"},
          {"clamp_tolerance_nats", kClampToleranceNats},
          {"pca_retain", cfg.retain},
          {"pca_cap", cfg.pca_cap ? json(*cfg.pca_cap) : json(nullptr)},
          {"pca_degenerate_eigenvalue", kDegenerateEigenvalue},
          {"pca_fit", "per layer and modality on the baseline condition, shared with knockout"},
          {"flow_layout", "one flow per layer and modality over (PCA coordinates, y); couplings act on the PCA "
                          "coordinates only, y gets per-coordinate maps"},
          {"flow_blocks", cfg.num_blocks},
          {"flow_hidden", cfg.hidden_dim},
          {"flow_log_scale_bound", kScaleBound},
          {"flow_norm_epsilon", kNormEpsilon},
          {"flows_knockout", cfg.reuse_flows ? "reused from baseline" : "retrained"},
          {"target_latent", "language flow output; vision flow output reported as zy_discrepancy"},
          {"gaussianity_thresholds", {{"skew", 0.5}, {"excess_kurtosis", 1.0}}},
          {"thresholds", to_json(cfg.thresholds)},
          {"delta_base_floor_bits", kDeltaBaseFloor},
          {"nmae_formula", kNmaeFormula},
          {"bootstrap", {{"resamples", cfg.bootstrap_resamples}, {"level", 0.95}, {"unit", "latent rows, paired"}}}}},
        {"warnings", warnings}};
    write_text_file(cfg.output_dir / "run_manifest.json", manifest.dump(2) + "\n");
    write_text_file(cfg.output_dir / "summary.txt", final_layer_summary(result.main.baseline.trajectory) +
                                                       "mechanism: " +
                                                       mechanism_label(result.main.baseline) +
                                                       "\n");
    return result;
}

std::string_view to_string(ReportFormat f)
{
    switch (f) {
    case ReportFormat::csv: return "csv";
    case ReportFormat::json: return "json";
    case ReportFormat::plotdata: return "plotdata";
    }
    return "csv";
}

ReportFormat parse_report_format(std::string_view s)
{
    if (s == "csv") return ReportFormat::csv;
    if (s == "json") return ReportFormat::json;
    if (s == "plotdata") return ReportFormat::plotdata;
    throw ValidationError("unknown report format '" + std::string(s) + "' (csv, json, plotdata)");
}

fs::path write_report(const fs::path& run_dir, ReportFormat format)
{
    for (const char* f : {"run_manifest.json", "trajectory.csv", "trajectory.json"}) {
        if (!fs::exists(run_dir / f)) {
            throw ValidationError("incomplete run directory '" + run_dir.string() + "': missing " + f);
        }
    }
    json manifest;
    json base_json;
    try {
        manifest = json::parse(read_text_file(run_dir / "run_manifest.json"));
        base_json = json::parse(read_text_file(run_dir / "trajectory.json"));
    } catch (const json::exception& e) {
        throw ValidationError("run directory '" + run_dir.string() + "': " + e.what());
    }
    const bool has_ko = manifest.at("stores").contains("knockout");
    if (has_ko) {
        for (const char* f : {"trajectory_knockout.csv", "trajectory_knockout.json", "knockout_report.json"}) {
            if (!fs::exists(run_dir / f)) {
                throw ValidationError("incomplete run directory '" + run_dir.string() + "': missing " + f);
            }
        }
    }
    struct Cond {
        std::string name;
        Trajectory traj;
    };
    std::vector<Cond> conds;
    conds.push_back({"normal", trajectory_from_csv(read_text_file(run_dir / "trajectory.csv"))});
    if (has_ko) conds.push_back({"knockout", trajectory_from_csv(read_text_file(run_dir / "trajectory_knockout.csv"))});

    const fs::path out_dir = run_dir / "report";
    fs::path out;
    switch (format) {
    case ReportFormat::csv: {
        std::string text = "condition," + info_state_csv_header() + "\n";
        for (const auto& c : conds) {
            for (const auto& s : c.traj.states) text += c.name + "," + to_csv_row(s) + "\n";
        }
        out = out_dir / "trajectories.csv";
        write_text_file(out, text);
        break;
    }
    case ReportFormat::plotdata: {
        std::string text = "layer,component,value,condition\n";
        for (const auto& c : conds) {
            for (const auto& s : c.traj.states) {
                for (Component comp : kPidComponents) {
                    text += std::to_string(s.layer) + "," + std::string(to_string(comp)) + "," +
                            fmt("%.6f", component_value(s, comp)) + "," + c.name + "\n";
                }
            }
        }
        out = out_dir / "plotdata.csv";
        write_text_file(out, text);
        break;
    }
    case ReportFormat::json: {
        json j = {{"run", {{"version", manifest.value("version", "")}, {"profile", manifest.value("profile", "")}}},
                  {"baseline", base_json}};
        if (has_ko) {
            try {
                j["knockout"] = json::parse(read_text_file(run_dir / "trajectory_knockout.json"));
                const json kr = json::parse(read_text_file(run_dir / "knockout_report.json"));
                j["knockout_report"] = kr;
                j["dep_score"] = kr.at("dep_score");
                j["predictions"] = kr.at("predictions");
            } catch (const json::exception& e) {
                throw ValidationError("run directory '" + run_dir.string() + "': " + e.what());
            }
            const ThresholdConfig th = thresholds_from_json(manifest.at("config").at("thresholds"));
            j["comparison"] = to_json(compare_trajectories(conds[0].traj, conds[1].traj, th));
        }
        out = out_dir / "report.json";
        write_text_file(out, j.dump(2) + "\n");
        break;
    }
    }
    return out;
}

}  // namespace pidflow
