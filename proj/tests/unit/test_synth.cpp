#include <doctest.h>

#include <cmath>

#include "pidflow/error.hpp"
#include "pidflow/synth.hpp"
#include "test_support.hpp"

using namespace pidflow;

namespace {

double corr(const Vector& a, const Vector& b)
{
    const Vector x = a.array() - a.mean();
    const Vector y = b.array() - b.mean();
    return x.dot(y) / std::sqrt(x.squaredNorm() * y.squaredNorm());
}

void check_profile(const InfoState& st, const PidProfile& p, double tol)
{
    CHECK(st.r == doctest::Approx(p.r).epsilon(tol).scale(1.0));
    CHECK(st.u_v == doctest::Approx(p.u_v).epsilon(tol).scale(1.0));
    CHECK(st.u_l == doctest::Approx(p.u_l).epsilon(tol).scale(1.0));
    CHECK(st.s == doctest::Approx(p.s).epsilon(tol).scale(1.0));
}

}  // namespace

TEST_CASE("Gaussian layer draws follow the covariance")
{
    GaussianLayerSpec diag;
    diag.cov = Matrix::Identity(3, 3);
    diag.n = 5000;
    const auto d = gen_gaussian_layer(diag);
    const double bound = 3.0 / std::sqrt(5000.0);
    CHECK(std::abs(corr(d.x_v.col(0), d.y)) < bound);
    CHECK(std::abs(corr(d.x_l.col(0), d.y)) < bound);
    CHECK(std::abs(corr(d.x_v.col(0), d.x_l.col(0))) < bound);

    GaussianLayerSpec c;
    c.cov = triplet_covariance(ScalarTriplet{0.9, 0.2, 0.1});
    c.n = 10000;
    c.seed = 42;
    CHECK(corr(gen_gaussian_layer(c).x_v.col(0), gen_gaussian_layer(c).y) == doctest::Approx(0.9).epsilon(0.02 / 0.9));

    GaussianLayerSpec empty = c;
    empty.n = 0;
    CHECK_THROWS_AS(gen_gaussian_layer(empty), ValidationError);
    GaussianLayerSpec bad = c;
    bad.cov(0, 1) = bad.cov(1, 0) = 1.5;
    CHECK_THROWS_AS(gen_gaussian_layer(bad), Error);
}

TEST_CASE("ground truth of independent blocks is zero")
{
    GaussianLayerSpec s;
    s.d_v = 2;
    s.d_l = 3;
    s.cov = Matrix::Identity(6, 6);
    const auto st = ground_truth_pid(s);
    CHECK(st.r == 0.0);
    CHECK(st.u_v == 0.0);
    CHECK(st.u_l == 0.0);
    CHECK(std::abs(st.s) < 1e-15);
}

TEST_CASE("scalar triplet ground truth")
{
    GaussianLayerSpec s;
    s.cov = triplet_covariance(ScalarTriplet{0.5, 0.9, 0.45});
    const auto st = ground_truth_pid(s);
    // Arbitrary-precision closed forms.
    CHECK(st.r == doctest::Approx(0.20751874963942190927).epsilon(1e-12));
    CHECK(st.u_v == 0.0);
    CHECK(st.u_l == doctest::Approx(0.99044558852614769170).epsilon(1e-12));
    CHECK(st.s == doctest::Approx(0.04429696163449424986).epsilon(1e-10));
    CHECK(st.i_tot == doctest::Approx(1.24226129980006385084).epsilon(1e-12));

    const auto again = decompose_pid_mmi(true_joint(s));
    CHECK(std::abs(again.r - st.r) < 1e-12);
    CHECK(std::abs(again.s - st.s) < 1e-12);
}

TEST_CASE("triplet solver reproduces achievable profiles")
{
    for (auto regime : {Regime::transduction, Regime::persistent_synergy, Regime::redundancy_dominant}) {
        const auto script = canonical_script(regime);
        for (const auto& p : script.profile) {
            GaussianLayerSpec s;
            s.cov = triplet_covariance(solve_triplet(p));
            check_profile(ground_truth_pid(s), p, 1e-7);
        }
    }
}

TEST_CASE("profiles the MMI rule cannot produce are rejected")
{
    CHECK_THROWS_WITH_AS(solve_triplet(PidProfile{0.2, 1.0, 1.0, 0.1}), doctest::Contains("unachievable under MMI"),
                         ValidationError);
    auto script = canonical_script(Regime::transduction);
    script.profile[5].u_v = 1.0;
    script.profile[5].u_l = 1.0;
    CHECK_THROWS_WITH_AS(gen_regime_dataset(script, 1), doctest::Contains("unachievable under MMI"), ValidationError);
}

TEST_CASE("canonical scripts match the shipped fixtures")
{
    const std::pair<Regime, const char*> files[] = {
        {Regime::transduction, "regimes/transduction.json"},
        {Regime::persistent_synergy, "regimes/persistent_synergy.json"},
        {Regime::redundancy_dominant, "regimes/redundancy_dominant.json"},
    };
    for (const auto& [regime, file] : files) {
        CAPTURE(file);
        CHECK(load_regime_script(test::fixture_path(file)) == canonical_script(regime));
        const auto s = canonical_script(regime);
        CHECK(regime_script_from_json(to_json(s)) == s);
    }
}

TEST_CASE("transduction script shape")
{
    const auto s = canonical_script(Regime::transduction);
    REQUIRE(s.profile.size() == 32);
    double peak = 0.0;
    int at = -1;
    for (int l = 0; l < 32; ++l) {
        const auto& p = s.profile[static_cast<std::size_t>(l)];
        CHECK(std::min(p.u_v, p.u_l) == 0.0);
        CHECK(p.s <= 0.3);
        if (p.u_v > peak) {
            peak = p.u_v;
            at = l;
        }
    }
    CHECK(at <= 1);
    CHECK(s.profile.back().u_l == doctest::Approx(6.0));
}

TEST_CASE("regime datasets")
{
    auto script = canonical_script(Regime::persistent_synergy);
    script.layers = 4;
    script.profile.resize(4);
    script.samples = 300;
    const auto a = gen_regime_dataset(script, 42);
    const auto b = gen_regime_dataset(script, 42);
    const auto c = gen_regime_dataset(script, 43);
    CHECK(a == b);
    CHECK_FALSE(a == c);
    CHECK(check_store(a).empty());
    CHECK(a.manifest.num_layers == 4);
    CHECK(a.manifest.sample_hash == b.manifest.sample_hash);
    CHECK(a.manifest.sample_hash != c.manifest.sample_hash);
    CHECK(a.targets.values.size() == 300);
    CHECK(a.layers[0].x_v.cols() == script.hidden_dim);
}

TEST_CASE("script validation")
{
    auto s = canonical_script(Regime::redundancy_dominant);
    s.profile.pop_back();
    CHECK_THROWS_AS(validate(s), ValidationError);
    s = canonical_script(Regime::redundancy_dominant);
    s.profile[0].r = -0.1;
    CHECK_THROWS_AS(validate(s), ValidationError);
    CHECK_THROWS_AS(regime_script_from_json(nlohmann::json{{"regime", "bogus"}}), ValidationError);
}

TEST_CASE("discrete systems are normalized")
{
    for (auto sys : {DiscreteSystem::xor_gate, DiscreteSystem::and_gate, DiscreteSystem::copy, DiscreteSystem::unique1}) {
        const auto p = gen_discrete_system(sys);
        Rational total(0);
        for (const auto& v : p.p) total += v;
        CHECK(total == Rational(1));
        CHECK(parse_discrete_system(to_string(sys)) == sys);
    }
}
