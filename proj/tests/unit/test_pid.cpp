#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "pidflow/error.hpp"
#include "pidflow/pid.hpp"
#include "pidflow/synth.hpp"

using namespace pidflow;

namespace {

// Arbitrary-precision values of -1/2 ln(1 - rho^2).
constexpr double kMiHalfNats = 0.14384103622589046372;
constexpr double kMiHalfBits = 0.20751874963942190927;
constexpr double kMiNineTenthsNats = 0.83036560341082545401;
constexpr double kMiNineTenthsBits = 1.19796433816556960097;

double scalar_mi_bits(double rho)
{
    Matrix c(3, 3);
    c << 1, rho, 0, rho, 1, 0, 0, 0, 1;
    const auto j = joint_from_covariance(c, 1, 1, 1);
    const int a[] = {0}, b[] = {1};
    return nats_to_bits(gaussian_mi(j, a, b));
}

Matrix random_spd(int d, std::mt19937_64& rng)
{
    std::normal_distribution<double> normal;
    Matrix a(d, d + 2);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = normal(rng);
    return a * a.transpose() / (d + 2) + 0.05 * Matrix::Identity(d, d);
}

}  // namespace

TEST_CASE("scalar mutual information closed form")
{
    CHECK(scalar_mi_bits(0.0) == 0.0);
    CHECK(std::abs(scalar_mi_bits(0.5) - kMiHalfBits) < 1e-12);
    CHECK(std::abs(scalar_mi_bits(0.9) - kMiNineTenthsBits) < 1e-12);
    CHECK(std::abs(bits_to_nats(scalar_mi_bits(0.5)) - kMiHalfNats) < 1e-12);
    CHECK(std::abs(bits_to_nats(scalar_mi_bits(0.9)) - kMiNineTenthsNats) < 1e-12);
    CHECK(scalar_mi_bits(-0.5) == scalar_mi_bits(0.5));
}

TEST_CASE("block formula agrees with the scalar formula")
{
    // The same pair embedded with an extra independent coordinate in group A.
    Matrix c = Matrix::Identity(4, 4);
    c(0, 2) = c(2, 0) = 0.6;
    const auto j = joint_from_covariance(c, 2, 1, 1);
    const int a[] = {0, 1}, b[] = {2};
    CHECK(gaussian_mi(j, a, b) == doctest::Approx(-0.5 * std::log(1 - 0.36)).epsilon(1e-12));
}

TEST_CASE("mutual information errors")
{
    Matrix c = Matrix::Identity(3, 3);
    const auto j = joint_from_covariance(c, 1, 1, 1);
    const int a[] = {0}, overlap[] = {0, 1}, bad[] = {5};
    CHECK_THROWS_AS(gaussian_mi(j, a, overlap), ValidationError);
    CHECK_THROWS_AS(gaussian_mi(j, a, bad), ValidationError);
    CHECK_THROWS_AS(gaussian_mi(j, a, std::span<const int>{}), ValidationError);
    Matrix asym = c;
    asym(0, 1) = 0.5;
    CHECK_THROWS_AS(joint_from_covariance(asym, 1, 1, 1), ValidationError);
}

TEST_CASE("covariance estimation")
{
    SUBCASE("duplicated column stays positive definite with ridge")
    {
        Matrix z(6, 1);
        z << 1, -2, 0.5, 3, -1, 0;
        const auto j = estimate_joint_cov(z, z * 0.5, z, 1e-6);
        const double var = j.cov(0, 0) - 1e-6;
        CHECK(j.cov(0, 2) == doctest::Approx(var));
        CHECK(Eigen::LLT<Matrix>(j.cov).info() == Eigen::Success);
    }
    SUBCASE("collinear pair without ridge is singular")
    {
        Matrix z(2, 1);
        z << 1, 2;
        CHECK_THROWS_WITH_AS(estimate_joint_cov(z, z, z, 0.0), doctest::Contains("singular"), NumericError);
    }
    SUBCASE("fewer than two rows")
    {
        Matrix z(1, 1);
        z << 1;
        CHECK_THROWS_AS(estimate_joint_cov(z, z, z), ValidationError);
    }
    SUBCASE("Monte Carlo recovers the generator")
    {
        Matrix cov(3, 3);
        cov << 1.0, 0.5, 0.3, 0.5, 2.0, -0.4, 0.3, -0.4, 1.5;
        GaussianLayerSpec spec;
        spec.cov = cov;
        spec.n = 50000;
        spec.seed = 42;
        const auto s = gen_gaussian_layer(spec);
        const auto j = estimate_joint_cov(s.x_l, s.x_v, s.y, 0.0);
        // Estimated order is (L, V, Y); generator order is (V, L, Y).
        const int perm[] = {1, 0, 2};
        for (int a = 0; a < 3; ++a) {
            for (int b = 0; b < 3; ++b) {
                const double truth = cov(perm[a], perm[b]);
                CHECK(std::abs(j.cov(a, b) - truth) <= 0.02 * std::max(1.0, std::abs(truth)));
            }
        }
    }
}

TEST_CASE("decomposition from mutual informations")
{
    const auto st = decompose_from_mi(bits_to_nats(5), bits_to_nats(2), bits_to_nats(6), 3);
    CHECK(st.layer == 3);
    CHECK(st.r == doctest::Approx(2));
    CHECK(st.u_l == doctest::Approx(3));
    CHECK(st.u_v == 0.0);
    CHECK(st.s == doctest::Approx(1));
    CHECK(st.i_tot == doctest::Approx(6));
    CHECK(st.clamp_flags == 0u);

    const auto neg = decompose_from_mi(1.0, 0.5, 1.0 - 1e-9);
    CHECK(neg.s == 0.0);
    CHECK(neg.clamp_flags == kClampS);
    CHECK(neg.clamp_magnitude == doctest::Approx(nats_to_bits(1e-9)));
}

TEST_CASE("independent blocks give zero components")
{
    const auto j = joint_from_covariance(Matrix::Identity(5, 5), 2, 2, 1);
    const auto st = decompose_pid_mmi(j);
    CHECK(st.r == 0.0);
    CHECK(st.u_v == 0.0);
    CHECK(st.u_l == 0.0);
    CHECK(std::abs(st.s) < 1e-15);
}

TEST_CASE("near-additive target has equal singles and large synergy")
{
    // Y = k (X1 + X2) + noise with k = (1 - 1e-3)/sqrt(2), unit variance.
    const double k = (1.0 - 1e-3) / std::sqrt(2.0);
    ScalarTriplet t{k, k, 0.0};
    GaussianLayerSpec spec;
    spec.cov = triplet_covariance(t);
    const auto st = ground_truth_pid(spec);
    CHECK(st.r == doctest::Approx(0.49855946564150358888).epsilon(1e-12));
    CHECK(st.u_v == doctest::Approx(0.0));
    CHECK(st.u_l == doctest::Approx(0.0));
    CHECK(st.s == doctest::Approx(3.98469344064826965159).epsilon(1e-10));
    CHECK(st.s > 0.0);
}

TEST_CASE("structural properties on random covariances")
{
    std::mt19937_64 rng(17);
    std::uniform_int_distribution<int> dim(1, 3);
    for (int trial = 0; trial < 200; ++trial) {
        const int dq = dim(rng), di = dim(rng);
        const Matrix c = random_spd(dq + di + 1, rng);
        const auto j = joint_from_covariance(c, dq, di, 1);
        const auto st = decompose_pid_mmi(j);
        CHECK(std::min(st.u_v, st.u_l) == 0.0);
        CHECK(st.additivity_error() < 1e-9);
        CHECK(check_identities(st, j).pass);

        // Invertible per-group linear maps leave every component unchanged.
        const Matrix aq = random_spd(dq, rng), ai = random_spd(di, rng);
        Matrix t = Matrix::Zero(c.rows(), c.cols());
        t.block(0, 0, dq, dq) = aq;
        t.block(dq, dq, di, di) = ai;
        t(dq + di, dq + di) = -3.0;
        const Matrix ct = t * c * t.transpose();
        const auto st2 = decompose_pid_mmi(joint_from_covariance(0.5 * (ct + ct.transpose()), dq, di, 1));
        CHECK(st2.r == doctest::Approx(st.r).epsilon(1e-8));
        CHECK(st2.u_v == doctest::Approx(st.u_v).epsilon(1e-8));
        CHECK(st2.u_l == doctest::Approx(st.u_l).epsilon(1e-8));
        CHECK(st2.s == doctest::Approx(st.s).epsilon(1e-8));
    }
}

TEST_CASE("identity residuals")
{
    ScalarTriplet t{0.5, 0.9, 0.45};
    GaussianLayerSpec spec;
    spec.cov = triplet_covariance(t);
    const auto j = true_joint(spec);
    auto st = decompose_pid_mmi(j);
    const auto ok = check_identities(st, j);
    CHECK(ok.pass);
    CHECK(ok.max_residual() < 1e-9);

    st.u_v += 0.1;
    const auto bad = check_identities(st, j);
    CHECK_FALSE(bad.pass);
    CHECK(bad.vision_residual == doctest::Approx(0.1));
    CHECK(bad.language_residual < 1e-12);
}

TEST_CASE("identities over a scripted 32-layer profile")
{
    const auto script = canonical_script(Regime::transduction);
    double worst = 0.0;
    for (const auto& p : script.profile) {
        GaussianLayerSpec spec;
        spec.cov = triplet_covariance(solve_triplet(p));
        const auto j = true_joint(spec);
        worst = std::max(worst, check_identities(decompose_pid_mmi(j), j).max_residual());
    }
    CHECK(worst < 1e-9);
}

TEST_CASE("CSV rows")
{
    InfoState s;
    s.layer = 4;
    s.r = 0.25;
    s.u_v = 0.0;
    s.u_l = 1.5;
    s.s = 0.125;
    s.i_tot = 1.875;
    s.clamp_flags = kClampUV;
    CHECK(info_state_csv_header() == "layer,R,U_V,U_L,S,I_tot,clamp_flags");
    CHECK(to_csv_row(s) == "4,0.250000,0.000000,1.500000,0.125000,1.875000,2");
    const auto back = parse_csv_row(to_csv_row(s));
    CHECK(back.layer == 4);
    CHECK(back.u_l == 1.5);
    CHECK(back.clamp_flags == kClampUV);
    s.u_v = -1e-12;
    CHECK(to_csv_row(s).find("-0.000000") == std::string::npos);
    CHECK_THROWS_AS(parse_csv_row("1,2,3"), ValidationError);
}
