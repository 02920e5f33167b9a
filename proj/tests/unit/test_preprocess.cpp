#include <doctest.h>

#include <random>

#include "pidflow/error.hpp"
#include "pidflow/preprocess.hpp"

using namespace pidflow;

namespace {

Matrix rows(std::initializer_list<std::initializer_list<double>> r)
{
    Matrix m(static_cast<Eigen::Index>(r.size()), static_cast<Eigen::Index>(r.begin()->size()));
    Eigen::Index i = 0;
    for (const auto& row : r) {
        Eigen::Index j = 0;
        for (double v : row) m(i, j++) = v;
        ++i;
    }
    return m;
}

// Rows whose sample covariance has exactly the given eigenvalues along the axes.
Matrix spectrum_data(const std::vector<double>& eig)
{
    const auto d = static_cast<Eigen::Index>(eig.size());
    Matrix m(2 * d, d);
    m.setZero();
    for (Eigen::Index k = 0; k < d; ++k) {
        // Two symmetric points per axis; unbiased variance 2 a^2 / (2d - 1) = eig.
        const double a = std::sqrt(eig[static_cast<std::size_t>(k)] * static_cast<double>(2 * d - 1) / 2.0);
        m(2 * k, k) = a;
        m(2 * k + 1, k) = -a;
    }
    return m;
}

Matrix gaussian(int n, const Vector& sd, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    Matrix m(n, sd.size());
    for (int i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < sd.size(); ++j) m(i, j) = sd(j) * normal(rng);
    }
    return m;
}

}  // namespace

TEST_CASE("pooling rules")
{
    const Matrix t = rows({{1, 3}, {3, 5}});
    CHECK(pool_region(t, PoolingRule::mean).isApprox(Vector::Map(std::vector<double>{2, 4}.data(), 2)));
    CHECK(pool_region(t, PoolingRule::max).isApprox(Vector::Map(std::vector<double>{3, 5}.data(), 2)));
    const std::vector<double> w = {1, 3};
    const Vector att = pool_region(rows({{0, 0}, {2, 2}}), PoolingRule::attention, w);
    CHECK(att(0) == doctest::Approx(1.5));
    CHECK(att(1) == doctest::Approx(1.5));
}

TEST_CASE("pooling errors")
{
    CHECK_THROWS_AS(pool_region(Matrix(0, 2), PoolingRule::mean), ValidationError);
    const std::vector<double> zero = {0, 0};
    CHECK_THROWS_AS(pool_region(rows({{1, 1}, {2, 2}}), PoolingRule::attention, zero), ValidationError);
    const std::vector<double> neg = {-1, 2};
    CHECK_THROWS_AS(pool_region(rows({{1, 1}, {2, 2}}), PoolingRule::attention, neg), ValidationError);
}

TEST_CASE("mean pooling is linear and permutation invariant")
{
    std::mt19937_64 rng(3);
    std::normal_distribution<double> normal;
    for (int trial = 0; trial < 20; ++trial) {
        Matrix a(5, 4), b(5, 4);
        for (Eigen::Index i = 0; i < a.size(); ++i) {
            a.data()[i] = normal(rng);
            b.data()[i] = normal(rng);
        }
        const double alpha = normal(rng), beta = normal(rng);
        const Vector lhs = pool_region(alpha * a + beta * b, PoolingRule::mean);
        const Vector rhs = alpha * pool_region(a, PoolingRule::mean) + beta * pool_region(b, PoolingRule::mean);
        CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);

        Matrix p = a;
        p.row(0).swap(p.row(4));
        CHECK((pool_region(p, PoolingRule::mean) - pool_region(a, PoolingRule::mean)).norm() < 1e-12);
        CHECK((pool_region(p, PoolingRule::max) - pool_region(a, PoolingRule::max)).norm() == 0.0);
    }
}

TEST_CASE("points on a line need one component")
{
    Matrix m(4, 3);
    for (int i = 0; i < 4; ++i) m.row(i) << i, 2.0 * i, -1.0 * i;
    const auto b = fit_pca(m, 0.95);
    CHECK(b.d_prime == 1);
    CHECK(b.retained_fraction == doctest::Approx(1.0));
}

TEST_CASE("retain rule and cap")
{
    const Matrix m = spectrum_data({6, 3, 1});
    const auto full = fit_pca(m, 0.95);
    CHECK(full.d_prime == 3);
    CHECK_FALSE(full.capped);
    CHECK(full.eigenvalues(0) == doctest::Approx(6.0));
    CHECK(full.eigenvalues(2) == doctest::Approx(1.0));

    const auto capped = fit_pca(m, 0.95, 2);
    CHECK(capped.d_prime == 2);
    CHECK(capped.capped);
    CHECK(capped.retained_fraction == doctest::Approx(0.9));

    PcaOptions fixed;
    fixed.fixed_dim = 1;
    CHECK(fit_pca(m, fixed).d_prime == 1);
}

TEST_CASE("variance accounting")
{
    Vector sd(3);
    sd << 2.0, 1.0, 0.1;
    const Matrix x = gaussian(1000, sd, 42);
    const auto b = fit_pca(x, 0.95);
    CHECK(b.d_prime == 2);
    const Matrix z = apply_pca(b, x);
    const Vector var = z.array().square().colwise().sum() / static_cast<double>(z.rows() - 1);
    CHECK(var(0) == doctest::Approx(4.0).epsilon(0.10));
    CHECK(var(1) == doctest::Approx(1.0).epsilon(0.10));
    // Projected variances are the retained eigenvalues.
    CHECK(var(0) == doctest::Approx(b.eigenvalues(0)).epsilon(1e-9));
    CHECK(b.retained_fraction >= 0.95);
    const Matrix gram = b.components * b.components.transpose();
    CHECK((gram - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-8);
    for (Eigen::Index k = 1; k < b.eigenvalues.size(); ++k) CHECK(b.eigenvalues(k) <= b.eigenvalues(k - 1));
}

TEST_CASE("projection of the mean row is zero")
{
    Vector sd = Vector::Ones(3);
    const Matrix x = gaussian(50, sd, 1);
    const auto b = fit_pca(x, 0.95);
    const Matrix repeated = b.mean.transpose().replicate(4, 1);
    CHECK(apply_pca(b, repeated).cwiseAbs().maxCoeff() < 1e-12);

    PcaOptions all;
    all.fixed_dim = 3;
    const auto full = fit_pca(x, all);
    const Matrix z = apply_pca(full, x);
    const Matrix centered = x.rowwise() - full.mean.transpose();
    // Full basis is a rotation of the centered data.
    CHECK((z * full.components - centered).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("basis JSON roundtrip")
{
    const auto b = fit_pca(spectrum_data({5, 2, 0.5}), 0.9);
    const auto back = pca_from_json(pca_to_json(b));
    CHECK(back.d_prime == b.d_prime);
    CHECK((back.components - b.components).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.mean - b.mean).cwiseAbs().maxCoeff() == 0.0);
    CHECK(back.retained_fraction == b.retained_fraction);
}

TEST_CASE("token layers pool per sample")
{
    LayerBlock b;
    TokenSample s;
    s.vision = FloatMatrix(2, 2);
    s.vision << 1, 3, 3, 5;
    s.language = FloatMatrix(1, 2);
    s.language << 7, 8;
    b.tokens = {s, s};
    const Matrix v = pool_layer(b, true, PoolingRule::mean);
    CHECK(v.rows() == 2);
    CHECK(v(1, 0) == doctest::Approx(2.0));
    CHECK(v(1, 1) == doctest::Approx(4.0));
    CHECK(pool_layer(b, false, PoolingRule::max)(0, 1) == doctest::Approx(8.0));
}
