#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace pidflow {

enum class BootstrapStatistic { mean, pearson_paired };

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

/// Percentile bootstrap interval of the mean of `values`.
Interval bootstrap_ci(std::span<const double> values, BootstrapStatistic statistic = BootstrapStatistic::mean,
                      int resamples = 1000, double level = 0.95, std::uint64_t seed = 42);

/// Paired form: rows (x_i, y_i) are resampled together. `mean` bootstraps the
/// mean of y - x; `pearson_paired` the correlation of x and y.
Interval bootstrap_ci(std::span<const double> x, std::span<const double> y, BootstrapStatistic statistic,
                      int resamples = 1000, double level = 0.95, std::uint64_t seed = 42);

using RowStatistic = std::function<double(std::span<const std::size_t>)>;

/// Row bootstrap of an arbitrary statistic over resampled row indices.
/// Resamples where the statistic is NaN are dropped; NaN bounds if all are.
Interval bootstrap_rows(std::size_t n, const RowStatistic& statistic, int resamples = 1000, double level = 0.95,
                        std::uint64_t seed = 42);

/// Paired comparison of b against a (differences d = b - a).
struct PairedEffect {
    double mean_diff = 0.0;
    double sd_diff = 0.0;  // sample sd, n - 1
    double t = 0.0;
    int dof = 0;
    double cohens_d = 0.0;
    bool degenerate = false;  // zero difference variance: t is +-inf or NaN
};

PairedEffect paired_effect(std::span<const double> a, std::span<const double> b);

struct AnovaResult {
    double f = 0.0;
    int df_between = 0;
    int df_within = 0;
    double ss_between = 0.0;
    double ss_within = 0.0;
    bool degenerate = false;  // zero within-group variance
};

/// One-way ANOVA F over groups (e.g. per-task dependence scores).
AnovaResult one_way_anova(const std::vector<std::vector<double>>& groups);

/// Pearson correlation; NaN when either series is constant.
double pearson(std::span<const double> a, std::span<const double> b);

/// Linear-interpolation quantile of ascending data, q in [0, 1].
double quantile_sorted(std::span<const double> sorted, double q);

}  // namespace pidflow
