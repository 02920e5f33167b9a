#include "pidflow/discrete_pid.hpp"

#include <algorithm>
#include <cmath>

#include "pidflow/error.hpp"

namespace pidflow {

namespace {

double to_double(const Rational& q)
{
    return static_cast<double>(q.numerator()) / static_cast<double>(q.denominator());
}
double to_double(double v) { return v; }

// log2 of a ratio of probabilities; exact ratios keep e.g. log2(2) == 1.
double log2_ratio(const Rational& num, const Rational& den) { return std::log2(to_double(num / den)); }
double log2_ratio(double num, double den) { return std::log2(num / den); }

template <typename T>
void validate(const JointPmf<T>& pmf)
{
    for (int n : {pmf.n1, pmf.n2, pmf.ny}) {
        if (n < 1 || n > kMaxDiscreteAlphabet) {
            throw ValidationError("discrete pid: alphabet sizes must be in [1, 16]");
        }
    }
    if (pmf.p.size() != static_cast<std::size_t>(pmf.n1 * pmf.n2 * pmf.ny)) {
        throw ValidationError("discrete pid: pmf size does not match alphabets");
    }
    T total(0);
    for (const T& v : pmf.p) {
        if (v < T(0)) throw ValidationError("discrete pid: negative probability");
        total += v;
    }
    if constexpr (std::is_same_v<T, double>) {
        for (double v : pmf.p) {
            if (!std::isfinite(v)) throw ValidationError("discrete pid: non-finite probability");
        }
        if (std::abs(total - 1.0) > 1e-9) throw ValidationError("discrete pid: probabilities must sum to 1");
    } else {
        if (total != T(1)) throw ValidationError("discrete pid: probabilities must sum to 1");
    }
}

// Specific information I(Y=y; X) for every y, given p(x, y) as an nx x ny table.
template <typename T>
std::vector<double> specific_information(const std::vector<T>& pxy, int nx, int ny, const std::vector<T>& py)
{
    std::vector<T> px(static_cast<std::size_t>(nx), T(0));
    for (int x = 0; x < nx; ++x) {
        for (int y = 0; y < ny; ++y) px[static_cast<std::size_t>(x)] += pxy[static_cast<std::size_t>(x * ny + y)];
    }
    std::vector<double> out(static_cast<std::size_t>(ny), 0.0);
    for (int y = 0; y < ny; ++y) {
        const T& p_y = py[static_cast<std::size_t>(y)];
        if (p_y == T(0)) continue;
        double acc = 0.0;
        for (int x = 0; x < nx; ++x) {
            const T& joint = pxy[static_cast<std::size_t>(x * ny + y)];
            if (joint == T(0)) continue;
            // p(x|y) log2 [p(x,y) / (p(x) p(y))]
            acc += to_double(joint / p_y) * log2_ratio(joint, px[static_cast<std::size_t>(x)] * p_y);
        }
        out[static_cast<std::size_t>(y)] = acc;
    }
    return out;
}

template <typename T>
DiscretePid brute(const JointPmf<T>& pmf)
{
    validate(pmf);
    const int n1 = pmf.n1, n2 = pmf.n2, ny = pmf.ny;
    std::vector<T> py(static_cast<std::size_t>(ny), T(0));
    std::vector<T> p1y(static_cast<std::size_t>(n1 * ny), T(0));
    std::vector<T> p2y(static_cast<std::size_t>(n2 * ny), T(0));
    std::vector<T> p12y(static_cast<std::size_t>(n1 * n2 * ny), T(0));
    for (int a = 0; a < n1; ++a) {
        for (int b = 0; b < n2; ++b) {
            for (int y = 0; y < ny; ++y) {
                const T& v = pmf.at(a, b, y);
                py[static_cast<std::size_t>(y)] += v;
                p1y[static_cast<std::size_t>(a * ny + y)] += v;
                p2y[static_cast<std::size_t>(b * ny + y)] += v;
                p12y[static_cast<std::size_t>((a * n2 + b) * ny + y)] += v;
            }
        }
    }
    const auto s1 = specific_information(p1y, n1, ny, py);
    const auto s2 = specific_information(p2y, n2, ny, py);
    const auto s12 = specific_information(p12y, n1 * n2, ny, py);

    DiscretePid out;
    for (int y = 0; y < ny; ++y) {
        const double w = to_double(py[static_cast<std::size_t>(y)]);
        const auto k = static_cast<std::size_t>(y);
        out.i1 += w * s1[k];
        out.i2 += w * s2[k];
        out.i_joint += w * s12[k];
        out.r += w * std::min(s1[k], s2[k]);
    }
    out.u1 = out.i1 - out.r;
    out.u2 = out.i2 - out.r;
    out.s = out.i_joint - out.i1 - out.i2 + out.r;
    return out;
}

}  // namespace

InfoState DiscretePid::to_info_state(int layer) const
{
    InfoState st;
    st.layer = layer;
    st.r = r;
    st.u_v = u1;
    st.u_l = u2;
    st.s = s;
    st.i_tot = i_joint;
    return st;
}

DiscretePid discrete_pid_brute(const JointPmf<Rational>& pmf) { return brute(pmf); }
DiscretePid discrete_pid_brute(const JointPmf<double>& pmf) { return brute(pmf); }

}  // namespace pidflow
