#include "pidflow/analysis.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "pidflow/error.hpp"

namespace pidflow {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::size_t component_index(Component c)
{
    for (std::size_t k = 0; k < kAllComponents.size(); ++k) {
        if (kAllComponents[k] == c) return k;
    }
    return 0;
}

std::optional<int> offset(const std::optional<int>& a, const std::optional<int>& b)
{
    if (a && b) return *b - *a;
    return std::nullopt;
}

json num_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json opt_json(const std::optional<int>& v) { return v ? json(*v) : json(nullptr); }

std::string fmt(const char* f, double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

}  // namespace

double nmae(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size() || a.empty()) throw ValidationError("nmae: series must be non-empty and equal length");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += std::abs(a[i] - b[i]);
        den += std::abs(a[i]);
    }
    const double n = static_cast<double>(a.size());
    return (num / n) / (den / n + 1e-12);
}

ComparisonReport compare_trajectories(const Trajectory& a, const Trajectory& b, const ThresholdConfig& cfg)
{
    if (a.num_layers() != b.num_layers()) {
        throw ValidationError("compare: layer counts differ (" + std::to_string(a.num_layers()) + " vs " +
                              std::to_string(b.num_layers()) + ")");
    }
    ComparisonReport rep;
    double sum = 0.0;
    for (std::size_t k = 0; k < kPidComponents.size(); ++k) {
        const auto sa = a.series(kPidComponents[k]);
        const auto sb = b.series(kPidComponents[k]);
        rep.pearson[k] = pearson(sa, sb);
        rep.nmae[k] = nmae(sa, sb);
        if (!std::isnan(rep.pearson[k])) {
            sum += rep.pearson[k];
            ++rep.defined_r;
        }
    }
    rep.mean_r = rep.defined_r > 0 ? sum / rep.defined_r : kNaN;
    if (a.num_layers() >= 5) {
        const auto ta = detect_turning_points(a, cfg);
        const auto tb = detect_turning_points(b, cfg);
        rep.uv_peak_offset = offset(ta.uv_peak, tb.uv_peak);
        rep.ul_trough_offset = offset(ta.ul_trough, tb.ul_trough);
        rep.ul_surge_onset_offset = offset(ta.ul_surge_onset, tb.ul_surge_onset);
    }
    return rep;
}

std::string_view to_string(DeltaFlag f)
{
    switch (f) {
    case DeltaFlag::ok: return "ok";
    case DeltaFlag::degenerate: return "degenerate";
    case DeltaFlag::undefined_base: return "undefined-base";
    }
    return "ok";
}

std::string_view to_string(Verdict v)
{
    switch (v) {
    case Verdict::confirmed: return "confirmed";
    case Verdict::refuted: return "refuted";
    case Verdict::degenerate: return "degenerate";
    }
    return "degenerate";
}

Delta relative_delta(double base, double ko)
{
    if (!std::isfinite(base) || !std::isfinite(ko)) throw ValidationError("delta: non-finite input");
    if (std::abs(base) < kDeltaBaseFloor) {
        if (std::abs(ko) < kDeltaBaseFloor) return {0.0, DeltaFlag::degenerate};
        return {kNaN, DeltaFlag::undefined_base};
    }
    return {(ko - base) / base * 100.0, DeltaFlag::ok};
}

const Delta& KnockoutReport::final_delta(Component c) const { return final_layer[component_index(c)]; }

DepScore dependence_score(const Delta& d_uv, const Delta& d_s, const Delta& d_tot)
{
    DepScore d;
    double sum = 0.0;
    for (const Delta* x : {&d_uv, &d_s, &d_tot}) {
        if (x->defined()) {
            sum += x->value;
            ++d.terms;
        }
    }
    if (d.terms == 0) throw ValidationError("dependence score: all three deltas are undefined");
    d.value = sum / d.terms;
    d.partial = d.terms < 3;
    return d;
}

DepScore dependence_score(const KnockoutReport& r)
{
    return dependence_score(r.final_delta(Component::u_v), r.final_delta(Component::s),
                            r.final_delta(Component::i_tot));
}

Predictions evaluate_predictions(const KnockoutReport& r)
{
    auto verdict = [](const Delta& d) {
        if (!d.defined()) return Verdict::degenerate;
        return d.value > 0.0 ? Verdict::confirmed : Verdict::refuted;
    };
    return {verdict(r.final_delta(Component::u_v)), verdict(r.final_delta(Component::s)),
            verdict(r.final_delta(Component::i_tot))};
}

KnockoutReport knockout_deltas(const Trajectory& base, const Trajectory& ko)
{
    if (base.num_layers() != ko.num_layers()) {
        throw ValidationError("knockout: layer counts differ");
    }
    const auto& bm = base.meta;
    const auto& km = ko.meta;
    if (!bm.model_id.empty() && !km.model_id.empty() && bm.model_id != km.model_id) {
        throw ValidationError("knockout: model_id differs ('" + bm.model_id + "' vs '" + km.model_id + "')");
    }
    if (!bm.task_id.empty() && !km.task_id.empty() && bm.task_id != km.task_id) {
        throw ValidationError("knockout: task_id differs ('" + bm.task_id + "' vs '" + km.task_id + "')");
    }
    if ((bm.condition && *bm.condition != Condition::normal) || (km.condition && *km.condition != Condition::knockout)) {
        throw ValidationError("knockout: expected a normal baseline and a knockout trajectory");
    }
    KnockoutReport rep;
    rep.base_meta = bm;
    rep.knockout_meta = km;
    for (int l = 0; l < base.num_layers(); ++l) {
        std::array<Delta, 5> row{};
        for (std::size_t k = 0; k < kAllComponents.size(); ++k) {
            row[k] = relative_delta(component_value(base.states[static_cast<std::size_t>(l)], kAllComponents[k]),
                                    component_value(ko.states[static_cast<std::size_t>(l)], kAllComponents[k]));
        }
        rep.per_layer.push_back(row);
    }
    rep.final_layer = rep.per_layer.back();
    rep.predictions = evaluate_predictions(rep);
    try {
        rep.dep = dependence_score(rep);
    } catch (const ValidationError&) {
        rep.dep.reset();
    }
    if (base.num_layers() >= 2) {
        for (std::size_t k = 0; k < kAllComponents.size(); ++k) {
            rep.stats[k].over_layers = paired_effect(base.series(kAllComponents[k]), ko.series(kAllComponents[k]));
        }
    }
    return rep;
}

json to_json(const ComparisonReport& r)
{
    json pr = json::object(), nm = json::object();
    for (std::size_t k = 0; k < kPidComponents.size(); ++k) {
        const std::string name(to_string(kPidComponents[k]));
        pr[name] = num_or_null(r.pearson[k]);
        nm[name] = r.nmae[k];
    }
    return json{{"pearson_per_component", pr},
                {"mean_r", num_or_null(r.mean_r)},
                {"defined_r", r.defined_r},
                {"nmae_per_component", nm},
                {"nmae_formula", r.nmae_formula},
                {"turning_point_offsets",
                 {{"uv_peak", opt_json(r.uv_peak_offset)},
                  {"ul_trough", opt_json(r.ul_trough_offset)},
                  {"ul_surge_onset", opt_json(r.ul_surge_onset_offset)}}}};
}

json to_json(const KnockoutReport& r)
{
    auto delta_json = [](const Delta& d) {
        return json{{"value_pct", num_or_null(d.value)}, {"flag", std::string(to_string(d.flag))}};
    };
    json fin = json::object(), layers = json::array(), stats = json::object();
    for (std::size_t k = 0; k < kAllComponents.size(); ++k) {
        const std::string name(to_string(kAllComponents[k]));
        fin[name] = delta_json(r.final_layer[k]);
        json s = json::object();
        if (const auto& e = r.stats[k].over_layers) {
            s["paired_over_layers"] = {{"mean_diff_bits", e->mean_diff}, {"sd_diff_bits", e->sd_diff},
                                       {"t", num_or_null(e->t)},         {"dof", e->dof},
                                       {"cohens_d", num_or_null(e->cohens_d)}, {"degenerate", e->degenerate}};
        }
        if (const auto& ci = r.stats[k].final_delta_ci) {
            s["final_delta_ci_pct"] = {num_or_null(ci->lo), num_or_null(ci->hi)};
        }
        stats[name] = s;
    }
    for (std::size_t l = 0; l < r.per_layer.size(); ++l) {
        json row = {{"layer", l}};
        for (std::size_t k = 0; k < kAllComponents.size(); ++k) {
            row[std::string(to_string(kAllComponents[k]))] = delta_json(r.per_layer[l][k]);
        }
        layers.push_back(row);
    }
    json dep = nullptr;
    if (r.dep) dep = {{"value_pct", r.dep->value}, {"terms", r.dep->terms}, {"partial", r.dep->partial}};
    return json{{"base_meta", to_json(r.base_meta)},
                {"knockout_meta", to_json(r.knockout_meta)},
                {"source_set", r.source_set},
                {"target_set", r.target_set},
                {"delta_formula", "(KO - Base) / Base * 100; Base < 1e-6 bits is degenerate (KO < 1e-6) or undefined-base"},
                {"final_layer", fin},
                {"dep_score", dep},
                {"predictions",
                 {{"P1_dU_V_positive", std::string(to_string(r.predictions.p1))},
                  {"P2_dS_positive", std::string(to_string(r.predictions.p2))},
                  {"P3_dI_tot_positive", std::string(to_string(r.predictions.p3))}}},
                {"stats", stats},
                {"bootstrap_resamples", r.bootstrap_resamples},
                {"per_layer", layers}};
}

std::string knockout_report_csv(const KnockoutReport& r, const Trajectory& base, const Trajectory& ko)
{
    std::string out = "layer,component,base,knockout,delta_pct,flag\n";
    for (std::size_t l = 0; l < r.per_layer.size(); ++l) {
        for (std::size_t k = 0; k < kAllComponents.size(); ++k) {
            const Delta& d = r.per_layer[l][k];
            out += std::to_string(l) + "," + std::string(to_string(kAllComponents[k])) + "," +
                   fmt("%.6f", component_value(base.states[l], kAllComponents[k])) + "," +
                   fmt("%.6f", component_value(ko.states[l], kAllComponents[k])) + "," +
                   (std::isnan(d.value) ? std::string("nan") : fmt("%.6f", d.value)) + "," +
                   std::string(to_string(d.flag)) + "\n";
        }
    }
    return out;
}

std::string final_layer_summary(const Trajectory& traj)
{
    const InfoState& s = traj.final_state();
    const double share = s.i_tot > 0.0 ? 100.0 * s.u_l / s.i_tot : kNaN;
    std::string out = "layer " + std::to_string(s.layer) + " (bits)\n";
    out += "R        U_L      U_V      S        Total    U_L-share\n";
    out += fmt("%-9.2f", s.r) + fmt("%-9.2f", s.u_l) + fmt("%-9.2f", s.u_v) + fmt("%-9.2f", s.s) +
           fmt("%-9.2f", s.i_tot) + fmt("%.1f%%", share) + "\n";
    return out;
}

}  // namespace pidflow
