#pragma once

#include <cstdint>
#include <vector>

#include <boost/rational.hpp>

#include "pidflow/pid.hpp"

namespace pidflow {

using Rational = boost::rational<std::int64_t>;

/// Joint pmf p(x1, x2, y) over small finite alphabets, stored x1-major.
template <typename T>
struct JointPmf {
    int n1 = 0;
    int n2 = 0;
    int ny = 0;
    std::vector<T> p;

    JointPmf() = default;
    JointPmf(int a, int b, int c) : n1(a), n2(b), ny(c), p(static_cast<std::size_t>(a * b * c), T(0)) {}

    T& at(int x1, int x2, int y) { return p[index(x1, x2, y)]; }
    const T& at(int x1, int x2, int y) const { return p[index(x1, x2, y)]; }

private:
    std::size_t index(int x1, int x2, int y) const
    {
        return static_cast<std::size_t>((x1 * n2 + x2) * ny + y);
    }
};

/// Largest alphabet size accepted by the brute-force oracle.
inline constexpr int kMaxDiscreteAlphabet = 16;

/// Williams-Beer I_min decomposition in bits; X1 and X2 are the two sources.
struct DiscretePid {
    double r = 0.0;
    double u1 = 0.0;
    double u2 = 0.0;
    double s = 0.0;
    double i1 = 0.0;
    double i2 = 0.0;
    double i_joint = 0.0;

    /// X1 read as the vision source, X2 as the language source.
    InfoState to_info_state(int layer = 0) const;
};

/// Exhaustive evaluation. Probabilities are handled as exact rationals and
/// only the logarithms are taken in floating point.
DiscretePid discrete_pid_brute(const JointPmf<Rational>& pmf);
DiscretePid discrete_pid_brute(const JointPmf<double>& pmf);

}  // namespace pidflow
