#include "pidflow/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "pidflow/error.hpp"

namespace pidflow {

Vector pool_region(const Matrix& tokens, PoolingRule rule, std::span<const double> weights)
{
    if (tokens.rows() < 1) {
        throw ValidationError("pool_region: empty region");
    }
    switch (rule) {
    case PoolingRule::mean:
        return tokens.colwise().mean().transpose();
    case PoolingRule::max:
        return tokens.colwise().maxCoeff().transpose();
    case PoolingRule::attention: {
        if (static_cast<Eigen::Index>(weights.size()) != tokens.rows()) {
            throw ValidationError("pool_region: attention pooling needs one weight per token");
        }
        double total = 0.0;
        for (double w : weights) {
            if (!(w >= 0.0) || !std::isfinite(w)) {
                throw ValidationError("pool_region: attention weights must be finite and non-negative");
            }
            total += w;
        }
        if (!(total > 0.0)) {
            throw ValidationError("pool_region: attention weights all zero");
        }
        const Eigen::Map<const Vector> w(weights.data(), static_cast<Eigen::Index>(weights.size()));
        return (tokens.transpose() * w) / total;
    }
    case PoolingRule::none:
        break;
    }
    throw ValidationError("pool_region: pooling rule 'none' cannot pool");
}

Matrix pool_layer(const LayerBlock& block, bool vision, PoolingRule rule)
{
    if (block.tokens.empty()) {
        const FloatMatrix& src = vision ? block.x_v : block.x_l;
        return src.cast<double>();
    }
    const bool has_weights = vision ? block.has_vision_weights : block.has_language_weights;
    if (rule == PoolingRule::attention && !has_weights) {
        throw ValidationError("attention pooling requested but the store carries no " +
                              std::string(vision ? "vision" : "language") + " attention weights");
    }
    const Eigen::Index n = static_cast<Eigen::Index>(block.tokens.size());
    const Eigen::Index d = vision ? block.tokens.front().vision.cols() : block.tokens.front().language.cols();
    Matrix out(n, d);
    std::vector<double> w;
    for (Eigen::Index i = 0; i < n; ++i) {
        const TokenSample& s = block.tokens[static_cast<std::size_t>(i)];
        const Matrix region = (vision ? s.vision : s.language).cast<double>();
        const auto& fw = vision ? s.vision_weights : s.language_weights;
        w.assign(fw.begin(), fw.end());
        out.row(i) = pool_region(region, rule, w).transpose();
    }
    return out;
}

PcaBasis fit_pca(const Matrix& data, const PcaOptions& options)
{
    const Eigen::Index n = data.rows();
    const Eigen::Index d = data.cols();
    if (n < 2) {
        throw ValidationError("fit_pca: need at least 2 rows");
    }
    if (!(options.retain > 0.0 && options.retain <= 1.0)) {
        throw ValidationError("fit_pca: retain must lie in (0, 1]");
    }
    if (!data.allFinite()) {
        throw ValidationError("fit_pca: non-finite data");
    }

    PcaBasis basis;
    basis.target_fraction = options.retain;
    basis.mean = data.colwise().mean().transpose();
    const Matrix centered = data.rowwise() - basis.mean.transpose();
    const Matrix cov = (centered.transpose() * centered) / static_cast<double>(n - 1);

    Eigen::SelfAdjointEigenSolver<Matrix> solver(cov);
    if (solver.info() != Eigen::Success) {
        throw NumericError("fit_pca: eigen-decomposition failed");
    }
    // Eigen returns ascending order; walk from the top.
    const Vector& evals = solver.eigenvalues();
    const Matrix& evecs = solver.eigenvectors();
    const double largest = std::max(evals(d - 1), 0.0);
    if (!(largest > 0.0)) {
        throw ValidationError("fit_pca: zero-variance data (all rows identical)");
    }
    const double floor = kDegenerateEigenvalue * std::max(1.0, largest);

    std::vector<Eigen::Index> order;
    double total = 0.0;
    for (Eigen::Index k = d - 1; k >= 0; --k) {
        if (evals(k) < floor) {
            ++basis.dropped_degenerate;
            continue;
        }
        order.push_back(k);
        total += evals(k);
    }

    int keep = 0;
    double cumulative = 0.0;
    for (Eigen::Index k : order) {
        cumulative += evals(k);
        ++keep;
        // The small slack absorbs round-off when the target is hit exactly.
        if (cumulative / total >= options.retain - 1e-12) {
            break;
        }
    }
    const int rank = static_cast<int>(order.size());
    if (options.fixed_dim) {
        if (*options.fixed_dim < 1) {
            throw ValidationError("fit_pca: fixed dimension must be >= 1");
        }
        basis.capped = *options.fixed_dim < keep;
        keep = std::min(*options.fixed_dim, rank);
    }
    if (options.cap) {
        if (*options.cap < 1) {
            throw ValidationError("fit_pca: cap must be >= 1");
        }
        if (*options.cap < keep) {
            keep = *options.cap;
            basis.capped = true;
        }
    }

    basis.d_prime = keep;
    basis.components.resize(keep, d);
    basis.eigenvalues.resize(keep);
    double retained = 0.0;
    for (int i = 0; i < keep; ++i) {
        const Eigen::Index k = order[static_cast<std::size_t>(i)];
        Vector v = evecs.col(k);
        // Sign convention: the largest-magnitude coordinate is positive (first on ties).
        Eigen::Index arg = 0;
        double best = -1.0;
        for (Eigen::Index j = 0; j < d; ++j) {
            if (std::abs(v(j)) > best + 1e-12) {
                best = std::abs(v(j));
                arg = j;
            }
        }
        if (v(arg) < 0.0) {
            v = -v;
        }
        basis.components.row(i) = v.transpose();
        basis.eigenvalues(i) = evals(k);
        retained += evals(k);
    }
    basis.retained_fraction = retained / total;
    return basis;
}

PcaBasis fit_pca(const Matrix& data, double retain, std::optional<int> cap)
{
    PcaOptions options;
    options.retain = retain;
    options.cap = cap;
    return fit_pca(data, options);
}

Matrix apply_pca(const PcaBasis& basis, const Matrix& data)
{
    if (data.cols() != basis.mean.size()) {
        throw ValidationError("apply_pca: dimension mismatch (data has " + std::to_string(data.cols()) +
                              " columns, basis expects " + std::to_string(basis.mean.size()) + ")");
    }
    return (data.rowwise() - basis.mean.transpose()) * basis.components.transpose();
}

std::string pca_to_json(const PcaBasis& basis)
{
    nlohmann::json j;
    j["d_prime"] = basis.d_prime;
    j["retained_fraction"] = basis.retained_fraction;
    j["target_fraction"] = basis.target_fraction;
    j["capped"] = basis.capped;
    j["dropped_degenerate"] = basis.dropped_degenerate;
    j["mean"] = std::vector<double>(basis.mean.data(), basis.mean.data() + basis.mean.size());
    j["eigenvalues"] =
        std::vector<double>(basis.eigenvalues.data(), basis.eigenvalues.data() + basis.eigenvalues.size());
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < basis.components.rows(); ++i) {
        std::vector<double> r(static_cast<std::size_t>(basis.components.cols()));
        for (Eigen::Index k = 0; k < basis.components.cols(); ++k) r[static_cast<std::size_t>(k)] = basis.components(i, k);
        rows.push_back(r);
    }
    j["components"] = rows;
    return j.dump(1) + "\n";
}

PcaBasis pca_from_json(const std::string& text)
{
    const auto j = nlohmann::json::parse(text);
    PcaBasis b;
    b.d_prime = j.at("d_prime").get<int>();
    b.retained_fraction = j.at("retained_fraction").get<double>();
    b.target_fraction = j.at("target_fraction").get<double>();
    b.capped = j.at("capped").get<bool>();
    b.dropped_degenerate = j.at("dropped_degenerate").get<int>();
    const auto mean = j.at("mean").get<std::vector<double>>();
    const auto ev = j.at("eigenvalues").get<std::vector<double>>();
    const auto rows = j.at("components").get<std::vector<std::vector<double>>>();
    b.mean = Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    b.eigenvalues = Eigen::Map<const Vector>(ev.data(), static_cast<Eigen::Index>(ev.size()));
    b.components.resize(static_cast<Eigen::Index>(rows.size()), b.mean.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (static_cast<Eigen::Index>(rows[i].size()) != b.mean.size()) {
            throw ValidationError("pca json: component row width mismatch");
        }
        for (std::size_t k = 0; k < rows[i].size(); ++k) {
            b.components(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
        }
    }
    return b;
}

}  // namespace pidflow
