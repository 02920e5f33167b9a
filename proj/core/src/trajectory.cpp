#include "pidflow/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "pidflow/error.hpp"
#include "pidflow/gaussianize.hpp"

namespace pidflow {

using nlohmann::json;

std::string_view to_string(Component c)
{
    switch (c) {
    case Component::r: return "R";
    case Component::u_v: return "U_V";
    case Component::u_l: return "U_L";
    case Component::s: return "S";
    case Component::i_tot: return "I_tot";
    }
    return "?";
}

Component parse_component(std::string_view s)
{
    for (Component c : kAllComponents) {
        if (to_string(c) == s) return c;
    }
    throw ValidationError("unknown component '" + std::string(s) + "'");
}

double component_value(const InfoState& s, Component c)
{
    switch (c) {
    case Component::r: return s.r;
    case Component::u_v: return s.u_v;
    case Component::u_l: return s.u_l;
    case Component::s: return s.s;
    case Component::i_tot: return s.i_tot;
    }
    return 0.0;
}

std::vector<double> Trajectory::series(Component c) const
{
    std::vector<double> out;
    out.reserve(states.size());
    for (const auto& s : states) out.push_back(component_value(s, c));
    return out;
}

std::string_view to_string(Mechanism m)
{
    switch (m) {
    case Mechanism::persistent_synergy: return "persistent_synergy";
    case Mechanism::modal_transduction: return "modal_transduction";
    case Mechanism::redundancy_dominant: return "redundancy_dominant";
    case Mechanism::none: return "none";
    }
    return "none";
}

Mechanism parse_mechanism(std::string_view s)
{
    for (Mechanism m : {Mechanism::persistent_synergy, Mechanism::modal_transduction, Mechanism::redundancy_dominant,
                        Mechanism::none}) {
        if (to_string(m) == s) return m;
    }
    throw ValidationError("unknown mechanism '" + std::string(s) + "'");
}

void validate(const ThresholdConfig& cfg)
{
    if (!(cfg.tau_s > 0.0)) throw ValidationError("thresholds: tau_s must be > 0");
    if (!(cfg.gamma > 0.0 && cfg.gamma < 1.0)) throw ValidationError("thresholds: gamma must be in (0, 1)");
    if (!(cfg.eta > 0.0 && cfg.eta < 1.0)) throw ValidationError("thresholds: eta must be in (0, 1)");
    if (!(cfg.rho > 1.0)) throw ValidationError("thresholds: rho must be > 1");
    if (cfg.ell0 < 0) throw ValidationError("thresholds: ell0 must be >= 0");
    if (!(cfg.peak_window_fraction > 0.0 && cfg.peak_window_fraction <= 1.0)) {
        throw ValidationError("thresholds: peak_window_fraction must be in (0, 1]");
    }
    if (cfg.smoothing_window < 1 || cfg.smoothing_window % 2 == 0) {
        throw ValidationError("thresholds: smoothing_window must be a positive odd integer");
    }
}

Trajectory assemble_trajectory(std::vector<InfoState> states, TrajectoryMeta meta)
{
    if (states.empty()) throw ValidationError("trajectory: no states");
    std::sort(states.begin(), states.end(), [](const InfoState& a, const InfoState& b) { return a.layer < b.layer; });
    for (std::size_t k = 0; k < states.size(); ++k) {
        const InfoState& s = states[k];
        if (k > 0 && s.layer == states[k - 1].layer) {
            throw ValidationError("trajectory: duplicate layer " + std::to_string(s.layer));
        }
        if (s.layer != static_cast<int>(k)) {
            throw ValidationError("trajectory: missing layer " + std::to_string(k));
        }
        for (Component c : kAllComponents) {
            const double v = component_value(s, c);
            if (!std::isfinite(v) || v < 0.0) {
                throw ValidationError("trajectory: layer " + std::to_string(s.layer) + " has invalid " +
                                      std::string(to_string(c)));
            }
        }
        const double sum = s.component_sum();
        if (std::abs(sum - s.i_tot) > 1e-4 * std::max(1.0, s.i_tot) + 1e-5) {
            throw ValidationError("trajectory: layer " + std::to_string(s.layer) + " I_tot " + std::to_string(s.i_tot) +
                                  " disagrees with component sum " + std::to_string(sum));
        }
    }
    return Trajectory{std::move(states), std::move(meta)};
}

std::vector<int> prominent_maxima(const std::vector<double>& xs, double prominence_fraction)
{
    const int n = static_cast<int>(xs.size());
    std::vector<int> out;
    if (n == 0) return out;
    const auto [mn, mx] = std::minmax_element(xs.begin(), xs.end());
    const double range = *mx - *mn;
    if (!(range > 0.0)) return out;
    const double floor = prominence_fraction * range;
    int i = 0;
    while (i < n) {
        int j = i;
        while (j + 1 < n && xs[static_cast<std::size_t>(j + 1)] == xs[static_cast<std::size_t>(i)]) ++j;
        const double v = xs[static_cast<std::size_t>(i)];
        const bool left_ok = i == 0 || xs[static_cast<std::size_t>(i - 1)] < v;
        const bool right_ok = j == n - 1 || xs[static_cast<std::size_t>(j + 1)] < v;
        if (left_ok && right_ok && !(i == 0 && j == n - 1)) {
            // Topographic prominence: on each side, the lowest point passed
            // before reaching higher ground; a side that runs into the edge
            // first does not constrain. The global maximum drops to the minimum.
            auto side_min = [&](int start, int step) -> std::optional<double> {
                double lowest = v;
                for (int k = start; k >= 0 && k < n; k += step) {
                    const double x = xs[static_cast<std::size_t>(k)];
                    if (x > v) return lowest;
                    lowest = std::min(lowest, x);
                }
                return std::nullopt;
            };
            const auto left = side_min(i - 1, -1);
            const auto right = side_min(j + 1, +1);
            double base = *mn;
            if (left && right) {
                base = std::max(*left, *right);
            } else if (left) {
                base = *left;
            } else if (right) {
                base = *right;
            }
            if (v - base >= floor) out.push_back(i);
        }
        i = j + 1;
    }
    return out;
}

namespace {

int argmax_in(const std::vector<double>& xs, int lo, int hi)
{
    int best = lo;
    for (int k = lo + 1; k <= hi; ++k) {
        if (xs[static_cast<std::size_t>(k)] > xs[static_cast<std::size_t>(best)]) best = k;
    }
    return best;
}

int argmin_in(const std::vector<double>& xs, int lo, int hi)
{
    int best = lo;
    for (int k = lo + 1; k <= hi; ++k) {
        if (xs[static_cast<std::size_t>(k)] < xs[static_cast<std::size_t>(best)]) best = k;
    }
    return best;
}

}  // namespace

TurningPoints detect_turning_points(const Trajectory& traj, const ThresholdConfig& cfg)
{
    validate(cfg);
    const int n = traj.num_layers();
    if (n < 5) {
        throw ValidationError("turning points need at least 5 layers, got " + std::to_string(n));
    }
    const int last = n - 1;
    TurningPoints tp;
    tp.detector_params.smoothing_window = cfg.smoothing_window;
    const DetectorParams& p = tp.detector_params;
    const int h = cfg.smoothing_window / 2;

    const auto uv = traj.series(Component::u_v);
    const auto ul = traj.series(Component::u_l);
    const auto uv_s = moving_average(uv, cfg.smoothing_window);
    const auto ul_s = moving_average(ul, cfg.smoothing_window);

    // Landmarks are located on the smoothed series, then snapped to the raw
    // extremum within half a smoothing window.
    {
        const int k = argmax_in(uv_s, 0, last);
        tp.uv_peak = argmax_in(uv, std::max(0, k - h), std::min(last, k + h));
    }

    const int lo = p.trough_margin_low;
    const int hi = last - p.trough_margin_high;
    if (lo < hi) {
        bool non_decreasing = true;
        for (int k = lo; k < hi; ++k) {
            if (ul_s[static_cast<std::size_t>(k + 1)] < ul_s[static_cast<std::size_t>(k)]) {
                non_decreasing = false;
                break;
            }
        }
        if (!non_decreasing) {
            const int k = argmin_in(ul_s, lo, hi);
            tp.ul_trough = argmin_in(ul, std::max(lo, k - h), std::min(hi, k + h));
        }
    }

    double max_diff = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < last; ++k) {
        max_diff = std::max(max_diff, ul[static_cast<std::size_t>(k + 1)] - ul[static_cast<std::size_t>(k)]);
    }
    if (max_diff > 0.0) {
        const int start = tp.ul_trough ? *tp.ul_trough : (last + 1) / 2;
        for (int k = start; k < last; ++k) {
            if (ul[static_cast<std::size_t>(k + 1)] - ul[static_cast<std::size_t>(k)] > p.surge_fraction * max_diff) {
                tp.ul_surge_onset = k;
                break;
            }
        }
    }

    if (tp.uv_peak && tp.ul_trough && tp.ul_surge_onset) {
        tp.order_violated = !(*tp.uv_peak <= *tp.ul_trough && *tp.ul_trough <= *tp.ul_surge_onset);
    }
    return tp;
}

MechanismReport classify_mechanism(const Trajectory& traj, const ThresholdConfig& cfg)
{
    validate(cfg);
    if (traj.states.empty()) throw ValidationError("classify: empty trajectory");
    const InfoState& fin = traj.final_state();
    if (!(fin.i_tot > 0.0)) {
        throw ValidationError("classify: final-layer I_tot must be > 0");
    }
    if (cfg.ell0 > traj.last_layer()) {
        throw ValidationError("classify: ell0 beyond the last layer");
    }
    MechanismReport rep;
    rep.thresholds = cfg;
    rep.turning_points = detect_turning_points(traj, cfg);
    MechanismEvidence& ev = rep.evidence;
    const double total = fin.i_tot;
    const int last = traj.last_layer();

    ev.synergy_final = fin.s;
    ev.synergy_share = fin.s / total;
    ev.synergy_fired = fin.s > cfg.tau_s && ev.synergy_share > cfg.gamma;

    const auto uv_s = moving_average(traj.series(Component::u_v), cfg.smoothing_window);
    ev.uv_maxima = static_cast<int>(prominent_maxima(uv_s, rep.turning_points.detector_params.prominence_fraction).size());
    ev.uv_peak = rep.turning_points.uv_peak;
    ev.peak_limit = cfg.peak_window_fraction * last;
    ev.ul_share = fin.u_l / total;
    ev.transduction_fired = ev.uv_maxima == 1 && ev.uv_peak && *ev.uv_peak < ev.peak_limit && ev.ul_share > cfg.eta;

    ev.redundancy_final = fin.r;
    ev.redundancy_ell0 = traj.states[static_cast<std::size_t>(cfg.ell0)].r;
    ev.redundancy_share = fin.r / total;
    ev.max_other = std::max({fin.u_v, fin.u_l, fin.s});
    ev.redundancy_fired = fin.r > ev.redundancy_ell0 && fin.r > cfg.rho * ev.max_other;

    double best = -1.0;
    auto consider = [&](bool fired, Mechanism m, double share) {
        if (!fired) return;
        rep.fired.push_back(m);
        if (share > best) {
            best = share;
            rep.primary_label = m;
        }
    };
    consider(ev.synergy_fired, Mechanism::persistent_synergy, ev.synergy_share);
    consider(ev.transduction_fired, Mechanism::modal_transduction, ev.ul_share);
    consider(ev.redundancy_fired, Mechanism::redundancy_dominant, ev.redundancy_share);
    rep.ambiguous = rep.fired.size() > 1;
    return rep;
}

SweepReport threshold_sweep(const Trajectory& traj, const SweepGrid& grid, const ThresholdConfig& base)
{
    auto or_base = [](const std::vector<double>& v, double b) { return v.empty() ? std::vector<double>{b} : v; };
    const auto taus = or_base(grid.tau_s, base.tau_s);
    const auto gammas = or_base(grid.gamma, base.gamma);
    const auto etas = or_base(grid.eta, base.eta);
    const auto rhos = or_base(grid.rho, base.rho);

    SweepReport rep;
    rep.default_label = classify_mechanism(traj, base).primary_label;
    std::size_t agree = 0;
    for (double t : taus) {
        for (double g : gammas) {
            for (double e : etas) {
                for (double r : rhos) {
                    ThresholdConfig cfg = base;
                    cfg.tau_s = t;
                    cfg.gamma = g;
                    cfg.eta = e;
                    cfg.rho = r;
                    const Mechanism m = classify_mechanism(traj, cfg).primary_label;
                    rep.points.push_back({cfg, m});
                    if (m == rep.default_label) ++agree;
                }
            }
        }
    }
    rep.stability = static_cast<double>(agree) / static_cast<double>(rep.points.size());
    return rep;
}

std::string trajectory_to_csv(const Trajectory& traj)
{
    std::string out = info_state_csv_header() + "\n";
    for (const auto& s : traj.states) out += to_csv_row(s) + "\n";
    return out;
}

Trajectory trajectory_from_csv(const std::string& text)
{
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("trajectory csv: empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("layer,R,U_V,U_L,S,I_tot", 0) != 0) {
        throw ValidationError("trajectory csv: unexpected header '" + line + "'");
    }
    std::vector<InfoState> states;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        states.push_back(parse_csv_row(line));
    }
    return assemble_trajectory(std::move(states));
}

namespace {

json opt_json(const std::optional<int>& v) { return v ? json(*v) : json(nullptr); }

std::optional<int> opt_from(const json& j)
{
    if (j.is_null()) return std::nullopt;
    return j.get<int>();
}

json state_json(const InfoState& s)
{
    return json{{"layer", s.layer}, {"R", s.r},        {"U_V", s.u_v},
                {"U_L", s.u_l},     {"S", s.s},        {"I_tot", s.i_tot},
                {"clamp_flags", s.clamp_flags}, {"clamp_magnitude", s.clamp_magnitude}};
}

}  // namespace

json to_json(const TrajectoryMeta& m)
{
    return json{{"model_id", m.model_id},
                {"task_id", m.task_id},
                {"condition", m.condition ? json(std::string(to_string(*m.condition))) : json(nullptr)},
                {"d_prime_override", opt_json(m.d_prime_override)},
                {"d_prime_language", m.d_prime_language},
                {"d_prime_vision", m.d_prime_vision},
                {"seed", m.seed},
                {"profile", m.profile}};
}

json to_json(const TurningPoints& tp)
{
    const auto& p = tp.detector_params;
    return json{{"uv_peak", opt_json(tp.uv_peak)},
                {"ul_trough", opt_json(tp.ul_trough)},
                {"ul_surge_onset", opt_json(tp.ul_surge_onset)},
                {"order_violated", tp.order_violated},
                {"detector_params",
                 {{"smoothing_window", p.smoothing_window},
                  {"smoothing", "centered moving average, edge-truncated"},
                  {"landmark_refinement", "raw extremum within half a smoothing window"},
                  {"prominence_fraction", p.prominence_fraction},
                  {"surge_fraction", p.surge_fraction},
                  {"surge_series", "raw forward differences of U_L"},
                  {"trough_window", {p.trough_margin_low, std::string("L-") + std::to_string(p.trough_margin_high)}}}}};
}

json to_json(const ThresholdConfig& c)
{
    return json{{"tau_s", c.tau_s},
                {"gamma", c.gamma},
                {"eta", c.eta},
                {"rho", c.rho},
                {"ell0", c.ell0},
                {"peak_window_fraction", c.peak_window_fraction},
                {"smoothing_window", c.smoothing_window}};
}

ThresholdConfig thresholds_from_json(const json& j, const ThresholdConfig& base)
{
    if (!j.is_object()) throw ValidationError("thresholds: expected a JSON object");
    ThresholdConfig c = base;
    for (const auto& [k, v] : j.items()) {
        if (k == "tau_s") c.tau_s = v.get<double>();
        else if (k == "gamma") c.gamma = v.get<double>();
        else if (k == "eta") c.eta = v.get<double>();
        else if (k == "rho") c.rho = v.get<double>();
        else if (k == "ell0") c.ell0 = v.get<int>();
        else if (k == "peak_window_fraction") c.peak_window_fraction = v.get<double>();
        else if (k == "smoothing_window") c.smoothing_window = v.get<int>();
        else throw ValidationError("thresholds: unknown key '" + k + "'");
    }
    validate(c);
    return c;
}

json to_json(const MechanismReport& r)
{
    const auto& e = r.evidence;
    json fired = json::array();
    for (Mechanism m : r.fired) fired.push_back(std::string(to_string(m)));
    return json{{"fired", fired},
                {"primary_label", std::string(to_string(r.primary_label))},
                {"ambiguous", r.ambiguous},
                {"thresholds", to_json(r.thresholds)},
                {"evidence",
                 {{"persistent_synergy",
                   {{"S_final", e.synergy_final}, {"S_share", e.synergy_share}, {"fired", e.synergy_fired}}},
                  {"modal_transduction",
                   {{"uv_prominent_maxima", e.uv_maxima},
                    {"uv_peak", opt_json(e.uv_peak)},
                    {"peak_limit", e.peak_limit},
                    {"U_L_share", e.ul_share},
                    {"fired", e.transduction_fired}}},
                  {"redundancy_dominant",
                   {{"R_final", e.redundancy_final},
                    {"R_ell0", e.redundancy_ell0},
                    {"R_share", e.redundancy_share},
                    {"max_other", e.max_other},
                    {"fired", e.redundancy_fired}}}}}};
}

json to_json(const SweepReport& s)
{
    json pts = json::array();
    for (const auto& p : s.points) {
        pts.push_back({{"tau_s", p.thresholds.tau_s},
                       {"gamma", p.thresholds.gamma},
                       {"eta", p.thresholds.eta},
                       {"rho", p.thresholds.rho},
                       {"label", std::string(to_string(p.label))}});
    }
    return json{{"default_label", std::string(to_string(s.default_label))}, {"stability", s.stability}, {"points", pts}};
}

json trajectory_to_json(const Trajectory& traj, const MechanismReport& report)
{
    json states = json::array();
    for (const auto& s : traj.states) states.push_back(state_json(s));
    return json{{"meta", to_json(traj.meta)},
                {"states", states},
                {"turning_points", to_json(report.turning_points)},
                {"mechanism", to_json(report)}};
}

Trajectory trajectory_from_json(const json& j)
{
    try {
        std::vector<InfoState> states;
        for (const auto& s : j.at("states")) {
            InfoState st;
            st.layer = s.at("layer").get<int>();
            st.r = s.at("R").get<double>();
            st.u_v = s.at("U_V").get<double>();
            st.u_l = s.at("U_L").get<double>();
            st.s = s.at("S").get<double>();
            st.i_tot = s.at("I_tot").get<double>();
            st.clamp_flags = s.value("clamp_flags", 0u);
            st.clamp_magnitude = s.value("clamp_magnitude", 0.0);
            states.push_back(st);
        }
        TrajectoryMeta meta;
        if (j.contains("meta")) {
            const auto& m = j.at("meta");
            meta.model_id = m.value("model_id", "");
            meta.task_id = m.value("task_id", "");
            if (m.contains("condition") && !m.at("condition").is_null()) {
                meta.condition = parse_condition(m.at("condition").get<std::string>());
            }
            if (m.contains("d_prime_override")) meta.d_prime_override = opt_from(m.at("d_prime_override"));
            meta.d_prime_language = m.value("d_prime_language", std::vector<int>{});
            meta.d_prime_vision = m.value("d_prime_vision", std::vector<int>{});
            meta.seed = m.value("seed", std::uint64_t{42});
            meta.profile = m.value("profile", "");
        }
        return assemble_trajectory(std::move(states), std::move(meta));
    } catch (const json::exception& e) {
        throw ValidationError(std::string("trajectory json: ") + e.what());
    }
}

Trajectory load_trajectory(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open trajectory file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    if (path.size() >= 5 && path.substr(path.size() - 5) == ".json") {
        json j;
        try {
            j = json::parse(text);
        } catch (const json::exception& e) {
            throw ValidationError("trajectory json '" + path + "': " + e.what());
        }
        return trajectory_from_json(j);
    }
    return trajectory_from_csv(text);
}

}  // namespace pidflow
