#include "pidflow/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/random/mersenne_twister.hpp>
#include <boost/random/uniform_int_distribution.hpp>

#include "pidflow/error.hpp"

namespace pidflow {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double mean_of(std::span<const double> xs)
{
    double s = 0.0;
    for (double v : xs) s += v;
    return s / static_cast<double>(xs.size());
}

void check_level(int resamples, double level)
{
    if (resamples < 1) throw ValidationError("bootstrap: resamples must be >= 1");
    if (!(level > 0.0 && level < 1.0)) throw ValidationError("bootstrap: level must be in (0, 1)");
}

}  // namespace

double quantile_sorted(std::span<const double> sorted, double q)
{
    if (sorted.empty()) throw ValidationError("quantile of empty data");
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto i = static_cast<std::size_t>(std::floor(pos));
    if (i + 1 >= sorted.size()) return sorted.back();
    const double frac = pos - static_cast<double>(i);
    return sorted[i] + frac * (sorted[i + 1] - sorted[i]);
}

double pearson(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size()) throw ValidationError("pearson: length mismatch");
    if (a.size() < 2) return kNaN;
    const double ma = mean_of(a), mb = mean_of(b);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (!(saa > 0.0) || !(sbb > 0.0)) return kNaN;
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

Interval bootstrap_rows(std::size_t n, const RowStatistic& statistic, int resamples, double level, std::uint64_t seed)
{
    check_level(resamples, level);
    if (n == 0) throw ValidationError("bootstrap: empty input");
    boost::random::mt19937_64 rng(seed);
    boost::random::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::vector<std::size_t> idx(n);
    std::vector<double> stats;
    stats.reserve(static_cast<std::size_t>(resamples));
    for (int b = 0; b < resamples; ++b) {
        for (auto& i : idx) i = pick(rng);
        const double v = statistic(idx);
        if (!std::isnan(v)) stats.push_back(v);
    }
    if (stats.empty()) return {kNaN, kNaN};
    std::sort(stats.begin(), stats.end());
    const double alpha = 1.0 - level;
    return {quantile_sorted(stats, alpha / 2.0), quantile_sorted(stats, 1.0 - alpha / 2.0)};
}

Interval bootstrap_ci(std::span<const double> values, BootstrapStatistic statistic, int resamples, double level,
                      std::uint64_t seed)
{
    if (values.empty()) throw ValidationError("bootstrap: empty input");
    if (statistic != BootstrapStatistic::mean) {
        throw ValidationError("bootstrap: pearson_paired needs two series");
    }
    return bootstrap_rows(
        values.size(),
        [&](std::span<const std::size_t> idx) {
            double s = 0.0;
            for (auto i : idx) s += values[i];
            return s / static_cast<double>(idx.size());
        },
        resamples, level, seed);
}

Interval bootstrap_ci(std::span<const double> x, std::span<const double> y, BootstrapStatistic statistic,
                      int resamples, double level, std::uint64_t seed)
{
    if (x.size() != y.size()) throw ValidationError("bootstrap: length mismatch");
    if (x.empty()) throw ValidationError("bootstrap: empty input");
    if (statistic == BootstrapStatistic::mean) {
        return bootstrap_rows(
            x.size(),
            [&](std::span<const std::size_t> idx) {
                double s = 0.0;
                for (auto i : idx) s += y[i] - x[i];
                return s / static_cast<double>(idx.size());
            },
            resamples, level, seed);
    }
    std::vector<double> xa(x.size()), ya(x.size());
    return bootstrap_rows(
        x.size(),
        [&](std::span<const std::size_t> idx) {
            for (std::size_t k = 0; k < idx.size(); ++k) {
                xa[k] = x[idx[k]];
                ya[k] = y[idx[k]];
            }
            return pearson(xa, ya);
        },
        resamples, level, seed);
}

PairedEffect paired_effect(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size()) throw ValidationError("paired_effect: length mismatch");
    if (a.size() < 2) throw ValidationError("paired_effect: need at least 2 pairs");
    const std::size_t n = a.size();
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = b[i] - a[i];
    PairedEffect e;
    e.mean_diff = mean_of(d);
    double ss = 0.0;
    for (double v : d) ss += (v - e.mean_diff) * (v - e.mean_diff);
    e.sd_diff = std::sqrt(ss / static_cast<double>(n - 1));
    e.dof = static_cast<int>(n) - 1;
    if (e.sd_diff > 0.0) {
        e.cohens_d = e.mean_diff / e.sd_diff;
        e.t = e.mean_diff / (e.sd_diff / std::sqrt(static_cast<double>(n)));
    } else {
        e.degenerate = true;
        const double inf = std::numeric_limits<double>::infinity();
        e.t = e.mean_diff > 0.0 ? inf : (e.mean_diff < 0.0 ? -inf : kNaN);
        e.cohens_d = e.mean_diff == 0.0 ? 0.0 : std::copysign(inf, e.mean_diff);
    }
    return e;
}

AnovaResult one_way_anova(const std::vector<std::vector<double>>& groups)
{
    if (groups.size() < 2) throw ValidationError("anova: need at least 2 groups");
    std::size_t total = 0;
    double grand = 0.0;
    for (const auto& g : groups) {
        if (g.empty()) throw ValidationError("anova: empty group");
        total += g.size();
        for (double v : g) grand += v;
    }
    if (total <= groups.size()) throw ValidationError("anova: need more observations than groups");
    grand /= static_cast<double>(total);
    AnovaResult r;
    for (const auto& g : groups) {
        const double m = mean_of(g);
        r.ss_between += static_cast<double>(g.size()) * (m - grand) * (m - grand);
        for (double v : g) r.ss_within += (v - m) * (v - m);
    }
    r.df_between = static_cast<int>(groups.size()) - 1;
    r.df_within = static_cast<int>(total - groups.size());
    const double msb = r.ss_between / r.df_between;
    const double msw = r.ss_within / r.df_within;
    if (msw > 0.0) {
        r.f = msb / msw;
    } else {
        r.degenerate = true;
        r.f = msb > 0.0 ? std::numeric_limits<double>::infinity() : kNaN;
    }
    return r;
}

}  // namespace pidflow
