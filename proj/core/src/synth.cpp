#include "pidflow/synth.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <boost/random/mersenne_twister.hpp>
#include <boost/random/normal_distribution.hpp>

#include "pidflow/error.hpp"
#include "pidflow/seed.hpp"

namespace pidflow {

using nlohmann::json;

namespace {

using Rng = boost::random::mt19937_64;

Matrix standard_normals(Rng& rng, Eigen::Index rows, Eigen::Index cols)
{
    boost::random::normal_distribution<double> z;
    Matrix m(rows, cols);
    // Row by row so the stream does not depend on Eigen's storage order.
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = z(rng);
    }
    return m;
}

// Squared correlation carrying `nats` of mutual information with a scalar.
double r2_from_nats(double nats) { return -std::expm1(-2.0 * nats); }

}  // namespace

void validate(const GaussianLayerSpec& spec)
{
    if (spec.d_v < 1 || spec.d_l < 1) throw ValidationError("gaussian spec: d_v and d_l must be >= 1");
    if (spec.n < 1) throw ValidationError("gaussian spec: n must be >= 1");
    const Eigen::Index d = spec.d_v + spec.d_l + 1;
    if (spec.cov.rows() != d || spec.cov.cols() != d) {
        throw ValidationError("gaussian spec: covariance must be (d_v + d_l + 1) square");
    }
    if (!spec.cov.allFinite()) throw ValidationError("gaussian spec: non-finite covariance");
    if ((spec.cov - spec.cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, spec.cov.cwiseAbs().maxCoeff())) {
        throw ValidationError("gaussian spec: covariance not symmetric");
    }
    Eigen::LLT<Matrix> llt(spec.cov);
    if (llt.info() != Eigen::Success) throw ValidationError("gaussian spec: covariance not positive definite");
}

GaussianSample gen_gaussian_layer(const GaussianLayerSpec& spec)
{
    validate(spec);
    Eigen::LLT<Matrix> llt(spec.cov);
    const Matrix lower = llt.matrixL();
    Rng rng(spec.seed);
    const Matrix x = standard_normals(rng, spec.n, spec.cov.rows()) * lower.transpose();
    GaussianSample out;
    out.x_v = x.leftCols(spec.d_v);
    out.x_l = x.middleCols(spec.d_v, spec.d_l);
    out.y = x.col(spec.d_v + spec.d_l);
    return out;
}

JointGaussian true_joint(const GaussianLayerSpec& spec)
{
    validate(spec);
    const int dv = spec.d_v, dl = spec.d_l, d = dv + dl + 1;
    // Reorder (V, L, Y) -> (L, V, Y).
    std::vector<int> perm;
    for (int k = 0; k < dl; ++k) perm.push_back(dv + k);
    for (int k = 0; k < dv; ++k) perm.push_back(k);
    perm.push_back(dv + dl);
    Matrix c(d, d);
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) c(i, j) = spec.cov(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    }
    return joint_from_covariance(c, dl, dv, 1, 0.0);
}

InfoState ground_truth_pid(const GaussianLayerSpec& spec) { return decompose_pid_mmi(true_joint(spec)); }

ScalarTriplet solve_triplet(const PidProfile& p)
{
    for (double v : {p.r, p.u_v, p.u_l, p.s}) {
        if (!std::isfinite(v) || v < 0.0) throw ValidationError("profile components must be finite and >= 0");
    }
    if (p.u_v > 0.0 && p.u_l > 0.0) {
        throw ValidationError("unachievable under MMI: U_V and U_L are both positive, but R = min(I_V, I_L) "
                              "forces min(U_V, U_L) = 0");
    }
    const double iv = bits_to_nats(p.r + p.u_v);
    const double il = bits_to_nats(p.r + p.u_l);
    const double ij = bits_to_nats(p.r + p.u_v + p.u_l + p.s);
    ScalarTriplet t;
    t.a = std::sqrt(r2_from_nats(iv));
    t.b = std::sqrt(r2_from_nats(il));
    const double target = r2_from_nats(ij);  // R^2 of Y on (V, L)
    const double lo_ab = std::min(t.a, t.b), hi_ab = std::max(t.a, t.b);
    if (hi_ab == 0.0) {
        if (p.s > 0.0) throw ValidationError("unachievable under MMI: synergy needs at least one informative source");
        return t;
    }
    // R^2(c) = (a^2 + b^2 - 2abc) / (1 - c^2) falls from +inf at c = -1 to
    // max(a, b)^2 at c* = min/max; synergy is the excess over that minimum.
    auto r2 = [&](double c) { return (t.a * t.a + t.b * t.b - 2.0 * t.a * t.b * c) / (1.0 - c * c); };
    const double c_star = lo_ab / hi_ab;
    if (p.s == 0.0) {
        if (c_star >= 1.0 - 1e-12) {
            throw ValidationError("unachievable: identical sources without synergy make the covariance singular");
        }
        t.c = c_star;
        return t;
    }
    double lo = -1.0, hi = c_star;
    for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (r2(mid) > target) lo = mid;
        else hi = mid;
    }
    t.c = 0.5 * (lo + hi);
    if (std::abs(r2(t.c) - target) > 1e-8 * std::max(1.0, target) || 1.0 - std::abs(t.c) < 1e-9) {
        throw ValidationError("unachievable: no non-degenerate source correlation realizes the profile");
    }
    return t;
}

Matrix triplet_covariance(const ScalarTriplet& t)
{
    Matrix c(3, 3);
    c << 1.0, t.c, t.a,  //
        t.c, 1.0, t.b,   //
        t.a, t.b, 1.0;
    return c;
}

std::string_view to_string(Regime r)
{
    switch (r) {
    case Regime::transduction: return "transduction";
    case Regime::persistent_synergy: return "persistent_synergy";
    case Regime::redundancy_dominant: return "redundancy_dominant";
    }
    return "transduction";
}

Regime parse_regime(std::string_view s)
{
    for (Regime r : {Regime::transduction, Regime::persistent_synergy, Regime::redundancy_dominant}) {
        if (to_string(r) == s) return r;
    }
    throw ValidationError("unknown regime '" + std::string(s) + "'");
}

void validate(const RegimeScript& s)
{
    if (s.layers < 1) throw ValidationError("regime script: layers must be >= 1");
    if (s.samples < 2) throw ValidationError("regime script: samples must be >= 2");
    if (s.hidden_dim < 1) throw ValidationError("regime script: hidden_dim must be >= 1");
    if (!(s.noise_std >= 0.0)) throw ValidationError("regime script: noise_std must be >= 0");
    if (static_cast<int>(s.profile.size()) != s.layers) {
        throw ValidationError("regime script: profile has " + std::to_string(s.profile.size()) + " entries for " +
                              std::to_string(s.layers) + " layers");
    }
    for (std::size_t l = 0; l < s.profile.size(); ++l) {
        try {
            solve_triplet(s.profile[l]);
        } catch (const ValidationError& e) {
            throw ValidationError("regime script layer " + std::to_string(l) + ": " + e.what());
        }
    }
}

RegimeScript regime_script_from_json(const json& j)
{
    RegimeScript s;
    try {
        s.regime = parse_regime(j.at("regime").get<std::string>());
        s.layers = j.value("layers", 32);
        s.samples = j.value("samples", 2000);
        s.hidden_dim = j.value("hidden_dim", 16);
        s.noise_std = j.value("noise_std", 0.03);
        s.model_id = j.value("model_id", std::string("synth"));
        s.task_id = j.value("task_id", std::string(to_string(s.regime)));
        s.condition = parse_condition(j.value("condition", std::string("normal")));
        const auto& p = j.at("profile");
        const auto r = p.at("R").get<std::vector<double>>();
        const auto uv = p.at("U_V").get<std::vector<double>>();
        const auto ul = p.at("U_L").get<std::vector<double>>();
        const auto sy = p.at("S").get<std::vector<double>>();
        if (r.size() != uv.size() || r.size() != ul.size() || r.size() != sy.size()) {
            throw ValidationError("regime script: profile arrays differ in length");
        }
        for (std::size_t l = 0; l < r.size(); ++l) s.profile.push_back({r[l], uv[l], ul[l], sy[l]});
    } catch (const json::exception& e) {
        throw ValidationError(std::string("regime script: ") + e.what());
    }
    validate(s);
    return s;
}

json to_json(const RegimeScript& s)
{
    std::vector<double> r, uv, ul, sy;
    for (const auto& p : s.profile) {
        r.push_back(p.r);
        uv.push_back(p.u_v);
        ul.push_back(p.u_l);
        sy.push_back(p.s);
    }
    return json{{"regime", std::string(to_string(s.regime))},
                {"layers", s.layers},
                {"samples", s.samples},
                {"hidden_dim", s.hidden_dim},
                {"noise_std", s.noise_std},
                {"model_id", s.model_id},
                {"task_id", s.task_id},
                {"condition", std::string(to_string(s.condition))},
                {"profile", {{"R", r}, {"U_V", uv}, {"U_L", ul}, {"S", sy}}}};
}

RegimeScript load_regime_script(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot open regime script '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    json j;
    try {
        j = json::parse(ss.str());
    } catch (const json::exception& e) {
        throw ValidationError("regime script '" + path.string() + "': " + e.what());
    }
    return regime_script_from_json(j);
}

RegimeScript canonical_script(Regime regime)
{
    RegimeScript s;
    s.regime = regime;
    s.task_id = std::string(to_string(regime));
    const int layers = s.layers;
    auto round3 = [](double v) { return std::round(v * 1000.0) / 1000.0; };
    for (int l = 0; l < layers; ++l) {
        PidProfile p;
        switch (regime) {
        case Regime::transduction:
            // Early vision-unique peak, a low language plateau, then a late
            // language-unique surge after layer 19.
            p.r = 0.3;
            p.s = 0.2;
            if (l == 0) {
                p.u_v = 2.5;
            } else if (l <= 11) {
                const double f = (11.0 - l) / 10.0;
                p.u_v = round3(0.2 + 3.8 * f * f);
            } else if (l <= 19) {
                p.u_l = 0.5;
            } else {
                p.u_l = round3(0.5 + 5.5 * (l - 19) / 12.0);
            }
            break;
        case Regime::persistent_synergy:
            p.r = 0.3;
            p.u_l = 0.2;
            p.s = 2.0;
            break;
        case Regime::redundancy_dominant:
            p.r = round3(0.5 + 3.0 * l / (layers - 1.0));
            p.u_l = 0.2;
            p.s = 0.15;
            break;
        }
        s.profile.push_back(p);
    }
    return s;
}

ActivationStore gen_regime_dataset(const RegimeScript& script, std::uint64_t seed)
{
    validate(script);
    const int n = script.samples;
    const int d = script.hidden_dim;
    ActivationStore store;
    Manifest& m = store.manifest;
    m.model_id = script.model_id;
    m.task_id = script.task_id;
    m.condition = script.condition;
    m.num_layers = script.layers;
    m.hidden_dim = d;
    m.num_samples = n;
    m.granularity = Granularity::pooled;
    m.pooling_rule = PoolingRule::mean;
    m.target_kind = TargetKind::scalar_logit;
    m.base_seed = seed;
    m.capture_point = "synthetic: scripted Gaussian regime '" + std::string(to_string(script.regime)) + "'";
    std::vector<std::string> ids;
    ids.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) ids.push_back("synth-" + std::to_string(seed) + "-" + std::to_string(i));
    m.sample_hash = sample_ids_hash(ids);
    for (int l = 0; l < script.layers; ++l) m.layer_files.push_back(layer_file_name(l));

    Rng target_rng(derive_seed(seed, "target"));
    const Vector y = standard_normals(target_rng, n, 1).col(0);
    store.targets.kind = TargetKind::scalar_logit;
    store.targets.values.assign(y.data(), y.data() + y.size());

    for (int l = 0; l < script.layers; ++l) {
        const ScalarTriplet t = solve_triplet(script.profile[static_cast<std::size_t>(l)]);
        // (V, L) | Y ~ N([a, b] y, C - [a, b][a, b]^T).
        Eigen::Matrix2d cond;
        cond << 1.0 - t.a * t.a, t.c - t.a * t.b, t.c - t.a * t.b, 1.0 - t.b * t.b;
        Eigen::LLT<Eigen::Matrix2d> llt(cond);
        if (llt.info() != Eigen::Success) {
            throw NumericError("synth layer " + std::to_string(l) + ": conditional covariance not positive definite");
        }
        const Eigen::Matrix2d lower = llt.matrixL();
        Rng rng(derive_seed(seed, "layer", static_cast<std::uint64_t>(l)));
        const Matrix e = standard_normals(rng, n, 2) * lower.transpose();
        Matrix sig(n, 2);
        sig.col(0) = t.a * y + e.col(0);
        sig.col(1) = t.b * y + e.col(1);

        LayerBlock block;
        block.layer_index = l;
        for (int mod = 0; mod < 2; ++mod) {
            Vector u = standard_normals(rng, d, 1).col(0);
            u.normalize();
            Matrix noise = standard_normals(rng, n, d) * script.noise_std;
            noise -= (noise * u) * u.transpose();  // keep noise off the signal direction
            const Matrix x = sig.col(mod) * u.transpose() + noise;
            (mod == 0 ? block.x_v : block.x_l) = x.cast<float>();
        }
        store.layers.push_back(std::move(block));
    }
    const auto violations = check_store(store);
    if (!violations.empty()) {
        throw ValidationError("synth produced an invalid store: " + violations.front().message);
    }
    return store;
}

std::string_view to_string(DiscreteSystem s)
{
    switch (s) {
    case DiscreteSystem::xor_gate: return "xor";
    case DiscreteSystem::and_gate: return "and";
    case DiscreteSystem::copy: return "copy";
    case DiscreteSystem::unique1: return "unique1";
    }
    return "xor";
}

DiscreteSystem parse_discrete_system(std::string_view s)
{
    for (DiscreteSystem d : {DiscreteSystem::xor_gate, DiscreteSystem::and_gate, DiscreteSystem::copy,
                             DiscreteSystem::unique1}) {
        if (to_string(d) == s) return d;
    }
    throw ValidationError("unknown discrete system '" + std::string(s) + "'");
}

JointPmf<Rational> gen_discrete_system(DiscreteSystem system)
{
    JointPmf<Rational> pmf(2, 2, 2);
    if (system == DiscreteSystem::copy) {
        pmf.at(0, 0, 0) = Rational(1, 2);
        pmf.at(1, 1, 1) = Rational(1, 2);
        return pmf;
    }
    for (int a = 0; a < 2; ++a) {
        for (int b = 0; b < 2; ++b) {
            int y = 0;
            switch (system) {
            case DiscreteSystem::xor_gate: y = a ^ b; break;
            case DiscreteSystem::and_gate: y = a & b; break;
            case DiscreteSystem::unique1: y = a; break;
            case DiscreteSystem::copy: break;
            }
            pmf.at(a, b, y) = Rational(1, 4);
        }
    }
    return pmf;
}

}  // namespace pidflow
