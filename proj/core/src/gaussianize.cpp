#include "pidflow/gaussianize.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <boost/random/mersenne_twister.hpp>
#include <boost/random/uniform_int_distribution.hpp>

#include "pidflow/error.hpp"
#include "pidflow/seed.hpp"

namespace pidflow {

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
constexpr double kNormMomentum = 0.1;
constexpr double kMaxLogDelta = 2.5;
constexpr double kMaxLogGamma = 8.0;

void clamp_parameters(FlowModel& m)
{
    for (auto& b : m.blocks) {
        b.log_delta = b.log_delta.cwiseMax(-kMaxLogDelta).cwiseMin(kMaxLogDelta);
        b.log_gamma = b.log_gamma.cwiseMax(-kMaxLogGamma).cwiseMin(kMaxLogGamma);
    }
}

class Adam {
public:
    Adam(std::size_t n, const TrainConfig& cfg) : m_(n, 0.0), v_(n, 0.0), cfg_(cfg) {}

    void step(FlowModel& model, FlowModel& grad)
    {
        ++t_;
        double norm2 = 0.0;
        for_each_parameter(grad, [&](double* g, Eigen::Index n) {
            for (Eigen::Index i = 0; i < n; ++i) norm2 += g[i] * g[i];
        });
        const double norm = std::sqrt(norm2);
        const double clip = (cfg_.grad_clip > 0.0 && norm > cfg_.grad_clip) ? cfg_.grad_clip / norm : 1.0;
        const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(t_));

        std::vector<double*> params;
        std::vector<Eigen::Index> sizes;
        for_each_parameter(model, [&](double* p, Eigen::Index n) {
            params.push_back(p);
            sizes.push_back(n);
        });
        std::size_t offset = 0;
        std::size_t k = 0;
        for_each_parameter(grad, [&](double* g, Eigen::Index n) {
            double* p = params[k++];
            for (Eigen::Index i = 0; i < n; ++i) {
                const double gi = g[i] * clip + cfg_.weight_decay * p[i];
                double& mi = m_[offset];
                double& vi = v_[offset];
                mi = kAdamBeta1 * mi + (1.0 - kAdamBeta1) * gi;
                vi = kAdamBeta2 * vi + (1.0 - kAdamBeta2) * gi * gi;
                p[i] -= cfg_.learning_rate * (mi / bc1) / (std::sqrt(vi / bc2) + kAdamEps);
                ++offset;
            }
        });
    }

private:
    std::vector<double> m_;
    std::vector<double> v_;
    TrainConfig cfg_;
    long t_ = 0;
};

}  // namespace

std::string_view to_string(Profile p)
{
    return p == Profile::paper ? "paper" : "test";
}

Profile parse_profile(std::string_view s)
{
    if (s == "paper") return Profile::paper;
    if (s == "test") return Profile::test;
    throw ValidationError("unknown profile '" + std::string(s) + "' (expected paper or test)");
}

FlowSettings profile_settings(Profile p)
{
    FlowSettings s;
    if (p == Profile::test) {
        s.train.steps = 2000;
        s.hidden_dim = 64;
    }
    return s;
}

TrainResult train_flow(const Matrix& data, const TrainConfig& config, const FlowArchitecture& arch)
{
    const Eigen::Index n = data.rows();
    const Eigen::Index d = data.cols();
    if (d != arch.input_dim) {
        throw ValidationError("train_flow: data has " + std::to_string(d) + " columns, architecture expects " +
                              std::to_string(arch.input_dim));
    }
    if (n < 2) {
        throw ValidationError("train_flow: need at least 2 rows");
    }
    if (!data.allFinite()) {
        throw ValidationError("train_flow: non-finite input");
    }
    if (config.steps < 0 || config.batch_size < 1 || !(config.learning_rate > 0.0) || config.weight_decay < 0.0 ||
        config.grad_clip < 0.0) {
        throw ValidationError("train_flow: invalid train config");
    }

    TrainResult result;
    if (n < 4 * static_cast<Eigen::Index>(config.batch_size)) {
        result.warnings.push_back("only " + std::to_string(n) + " rows for batch size " +
                                  std::to_string(config.batch_size) + " (4x recommended)");
    }

    FlowModel model = FlowModel::identity(arch, config.seed);
    model.train_config = config;
    model.shift = data.colwise().mean().transpose();
    model.scale.resize(d);
    for (Eigen::Index j = 0; j < d; ++j) {
        const double sd = std::sqrt((data.col(j).array() - model.shift(j)).square().mean());
        if (!(sd > 0.0)) {
            throw ValidationError("train_flow: zero-variance column " + std::to_string(j));
        }
        model.scale(j) = sd;
    }
    const FlowModel initial = model;
    model.initial_nll = flow_nll(model, data);
    model.final_nll = model.initial_nll;
    if (config.steps == 0) {
        result.model = std::move(model);
        return result;
    }

    const Matrix standardized = (data.rowwise() - model.shift.transpose()).array().rowwise() /
                                model.scale.transpose().array();
    const double log_scale_sum = model.scale.array().log().sum();
    const Eigen::Index batch = std::min<Eigen::Index>(config.batch_size, n);

    std::size_t param_count = 0;
    for_each_parameter(model, [&](double*, Eigen::Index k) { param_count += static_cast<std::size_t>(k); });
    Adam adam(param_count, config);
    FlowModel grad = zeros_like(model);

    boost::random::mt19937_64 rng(mix64(config.seed ^ 0x5851F42D4C957F2Dull));
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
    std::size_t cursor = perm.size();
    Matrix xb(batch, d);
    model.nll_curve.reserve(static_cast<std::size_t>(config.steps));

    for (int step = 0; step < config.steps; ++step) {
        for (Eigen::Index r = 0; r < batch; ++r) {
            if (cursor == perm.size()) {
                // Fisher-Yates with a portable distribution.
                for (std::size_t i = perm.size() - 1; i > 0; --i) {
                    boost::random::uniform_int_distribution<std::size_t> pick(0, i);
                    std::swap(perm[i], perm[pick(rng)]);
                }
                cursor = 0;
            }
            xb.row(r) = standardized.row(perm[cursor++]);
        }
        for_each_parameter(grad, [](double* g, Eigen::Index k) { std::fill(g, g + k, 0.0); });
        const double loss = flow_batch_loss(model, xb, &grad, kNormMomentum) + log_scale_sum;
        if (!std::isfinite(loss)) {
            throw NumericError("train_flow: training diverged at step " + std::to_string(step) +
                               " (non-finite loss)");
        }
        model.nll_curve.push_back(loss);
        adam.step(model, grad);
        clamp_parameters(model);
    }

    freeze_normalization(model, data);
    double final_nll = std::numeric_limits<double>::quiet_NaN();
    try {
        final_nll = flow_nll(model, data);
    } catch (const Error&) {
    }
    if (!std::isfinite(final_nll) || final_nll > model.initial_nll) {
        auto curve = std::move(model.nll_curve);
        const double init = model.initial_nll;
        model = initial;
        model.nll_curve = std::move(curve);
        model.initial_nll = init;
        model.final_nll = init;
        model.reverted_to_initial = true;
        result.warnings.push_back("trained flow did not improve full-data NLL; kept identity initialization");
    } else {
        model.final_nll = final_nll;
    }
    result.model = std::move(model);
    return result;
}

GaussFitReport gaussianity_diagnostics(const Matrix& data, double skew_threshold, double kurtosis_threshold)
{
    if (data.rows() < 8) {
        throw ValidationError("gaussianity_diagnostics: need at least 8 rows");
    }
    GaussFitReport r;
    r.skew_threshold = skew_threshold;
    r.kurtosis_threshold = kurtosis_threshold;
    for (Eigen::Index j = 0; j < data.cols(); ++j) {
        const Eigen::ArrayXd c = data.col(j).array() - data.col(j).mean();
        const double m2 = c.square().mean();
        if (!(m2 > 0.0)) {
            throw ValidationError("gaussianity_diagnostics: zero-variance coordinate " + std::to_string(j));
        }
        const double m3 = c.cube().mean();
        const double m4 = c.square().square().mean();
        const double skew = m3 / std::pow(m2, 1.5);
        const double kurt = m4 / (m2 * m2) - 3.0;
        r.skewness.push_back(skew);
        r.excess_kurtosis.push_back(kurt);
        r.max_abs_skew = std::max(r.max_abs_skew, std::abs(skew));
        r.max_abs_kurtosis = std::max(r.max_abs_kurtosis, std::abs(kurt));
        if (std::abs(skew) > skew_threshold || std::abs(kurt) > kurtosis_threshold) {
            r.flagged.push_back(static_cast<int>(j));
        }
    }
    return r;
}

GaussFitReport gaussianity_diagnostics(const FlowModel& model, const Matrix& latents, double skew_threshold,
                                       double kurtosis_threshold)
{
    GaussFitReport r = gaussianity_diagnostics(latents, skew_threshold, kurtosis_threshold);
    const auto& curve = model.nll_curve;
    if (curve.empty()) {
        r.nll_curve.push_back(model.final_nll);
        return r;
    }
    const std::size_t stride = std::max<std::size_t>(1, curve.size() / 100);
    for (std::size_t i = 0; i < curve.size(); i += stride) {
        r.nll_curve.push_back(curve[i]);
    }
    return r;
}

std::vector<double> moving_average(std::span<const double> xs, int window)
{
    if (window < 1) {
        throw ValidationError("moving_average: window must be >= 1");
    }
    const auto n = static_cast<std::ptrdiff_t>(xs.size());
    const std::ptrdiff_t h = window / 2;
    std::vector<double> out(xs.size());
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, i - h);
        const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(n - 1, i + h);
        double s = 0.0;
        for (std::ptrdiff_t k = lo; k <= hi; ++k) s += xs[static_cast<std::size_t>(k)];
        out[static_cast<std::size_t>(i)] = s / static_cast<double>(hi - lo + 1);
    }
    return out;
}

}  // namespace pidflow
