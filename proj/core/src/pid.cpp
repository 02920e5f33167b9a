#include "pidflow/pid.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "pidflow/error.hpp"

namespace pidflow {

namespace {

std::vector<int> range(int lo, int count)
{
    std::vector<int> v(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k) v[static_cast<std::size_t>(k)] = lo + k;
    return v;
}

Matrix submatrix(const Matrix& m, std::span<const int> idx)
{
    const auto k = static_cast<Eigen::Index>(idx.size());
    Matrix out(k, k);
    for (Eigen::Index a = 0; a < k; ++a) {
        for (Eigen::Index b = 0; b < k; ++b) {
            out(a, b) = m(idx[static_cast<std::size_t>(a)], idx[static_cast<std::size_t>(b)]);
        }
    }
    return out;
}

double log_det_pd(const Matrix& m)
{
    Eigen::LLT<Matrix> llt(m);
    if (llt.info() != Eigen::Success) {
        throw NumericError("singular covariance (not positive definite)");
    }
    const auto& l = llt.matrixLLT();
    double s = 0.0;
    for (Eigen::Index i = 0; i < m.rows(); ++i) s += std::log(l(i, i));
    return 2.0 * s;
}

void require_pd(const Matrix& cov)
{
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() != Eigen::Success) {
        throw NumericError("singular covariance (not positive definite)");
    }
}

std::string fmt6(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    // Avoid "-0.000000" so identical values always print identically.
    if (std::string(buf) == "-0.000000") return "0.000000";
    return buf;
}

}  // namespace

std::vector<int> JointGaussian::q_dims() const { return range(0, d_q); }
std::vector<int> JointGaussian::i_dims() const { return range(d_q, d_i); }
std::vector<int> JointGaussian::y_dims() const { return range(d_q + d_i, d_y); }

JointGaussian joint_from_covariance(const Matrix& cov, int d_q, int d_i, int d_y, double ridge)
{
    if (d_q < 1 || d_i < 1 || d_y < 1) {
        throw ValidationError("joint gaussian: every group needs at least one dimension");
    }
    const Eigen::Index d = d_q + d_i + d_y;
    if (cov.rows() != d || cov.cols() != d) {
        throw ValidationError("joint gaussian: covariance must be " + std::to_string(d) + " x " + std::to_string(d));
    }
    if (!cov.allFinite()) {
        throw ValidationError("joint gaussian: non-finite covariance");
    }
    if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, cov.cwiseAbs().maxCoeff())) {
        throw ValidationError("joint gaussian: covariance not symmetric");
    }
    if (ridge < 0.0) {
        throw ValidationError("joint gaussian: ridge must be non-negative");
    }
    JointGaussian j;
    j.d_q = d_q;
    j.d_i = d_i;
    j.d_y = d_y;
    j.mean = Vector::Zero(d);
    j.cov = 0.5 * (cov + cov.transpose());
    j.cov.diagonal().array() += ridge;
    j.ridge = ridge;
    require_pd(j.cov);
    return j;
}

JointGaussian estimate_joint_cov(const Matrix& z_q, const Matrix& z_i, const Matrix& z_y, double ridge)
{
    const Eigen::Index n = z_q.rows();
    if (z_i.rows() != n || z_y.rows() != n) {
        throw ValidationError("estimate_joint_cov: row counts differ");
    }
    if (n < 2) {
        throw ValidationError("estimate_joint_cov: need at least 2 samples");
    }
    const Eigen::Index dq = z_q.cols(), di = z_i.cols(), dy = z_y.cols();
    Matrix z(n, dq + di + dy);
    z << z_q, z_i, z_y;
    if (!z.allFinite()) {
        throw ValidationError("estimate_joint_cov: non-finite latents");
    }
    const Vector mu = z.colwise().mean().transpose();
    const Matrix c = z.rowwise() - mu.transpose();
    Matrix cov = (c.transpose() * c) / static_cast<double>(n);
    cov = 0.5 * (cov + cov.transpose());
    JointGaussian j = joint_from_covariance(cov, static_cast<int>(dq), static_cast<int>(di), static_cast<int>(dy), ridge);
    j.mean = mu;
    j.underdetermined = n <= dq + di + dy;
    return j;
}

double gaussian_mi(const JointGaussian& joint, std::span<const int> a, std::span<const int> b)
{
    if (a.empty() || b.empty()) {
        throw ValidationError("gaussian_mi: groups must be non-empty");
    }
    const int d = joint.dim();
    std::vector<char> seen(static_cast<std::size_t>(d), 0);
    for (int k : a) {
        if (k < 0 || k >= d) throw ValidationError("gaussian_mi: index out of range");
        seen[static_cast<std::size_t>(k)] |= 1;
    }
    for (int k : b) {
        if (k < 0 || k >= d) throw ValidationError("gaussian_mi: index out of range");
        if (seen[static_cast<std::size_t>(k)] & 1) throw ValidationError("gaussian_mi: groups overlap");
    }
    const Matrix& s = joint.cov;
    if (a.size() == 1 && b.size() == 1) {
        const double saa = s(a[0], a[0]);
        const double sbb = s(b[0], b[0]);
        if (!(saa > 0.0) || !(sbb > 0.0)) {
            throw NumericError("singular covariance (zero variance)");
        }
        const double rho = s(a[0], b[0]) / std::sqrt(saa * sbb);
        if (!(std::abs(rho) < 1.0)) {
            throw NumericError("singular covariance (|rho| = 1)");
        }
        return -0.5 * std::log1p(-rho * rho);
    }
    std::vector<int> ab(a.begin(), a.end());
    ab.insert(ab.end(), b.begin(), b.end());
    return 0.5 * (log_det_pd(submatrix(s, a)) + log_det_pd(submatrix(s, b)) - log_det_pd(submatrix(s, ab)));
}

double InfoState::additivity_error() const
{
    return std::abs(component_sum() - i_tot) / std::max(i_tot, 1e-9);
}

InfoState decompose_from_mi(double mi_language, double mi_vision, double mi_joint, int layer)
{
    const double r = std::min(mi_language, mi_vision);
    const double raw[4] = {r, mi_vision - r, mi_language - r, mi_joint - mi_language - mi_vision + r};
    const unsigned flags[4] = {kClampR, kClampUV, kClampUL, kClampS};
    double out[4];
    InfoState st;
    st.layer = layer;
    double worst = 0.0;
    for (int k = 0; k < 4; ++k) {
        out[k] = raw[k];
        if (raw[k] < 0.0) {
            out[k] = 0.0;
            st.clamp_flags |= flags[k];
            worst = std::max(worst, -raw[k]);
        }
    }
    st.r = nats_to_bits(out[0]);
    st.u_v = nats_to_bits(out[1]);
    st.u_l = nats_to_bits(out[2]);
    st.s = nats_to_bits(out[3]);
    st.i_tot = nats_to_bits(std::max(mi_joint, 0.0));
    st.clamp_magnitude = nats_to_bits(worst);
    return st;
}

InfoState decompose_pid_mmi(const JointGaussian& joint, int layer)
{
    const auto q = joint.q_dims();
    const auto i = joint.i_dims();
    const auto y = joint.y_dims();
    std::vector<int> qi = q;
    qi.insert(qi.end(), i.begin(), i.end());
    const double mi_l = gaussian_mi(joint, q, y);
    const double mi_v = gaussian_mi(joint, i, y);
    const double mi_j = gaussian_mi(joint, qi, y);
    return decompose_from_mi(mi_l, mi_v, mi_j, layer);
}

double IdentityReport::max_residual() const
{
    return std::max({vision_residual, language_residual, conditional_residual});
}

IdentityReport check_identities(const InfoState& st, const JointGaussian& joint)
{
    const auto q = joint.q_dims();
    const auto i = joint.i_dims();
    const auto y = joint.y_dims();
    std::vector<int> qi = q;
    qi.insert(qi.end(), i.begin(), i.end());
    const double mi_l = nats_to_bits(gaussian_mi(joint, q, y));
    const double mi_v = nats_to_bits(gaussian_mi(joint, i, y));
    const double mi_j = nats_to_bits(gaussian_mi(joint, qi, y));
    IdentityReport r;
    r.vision_residual = std::abs(mi_v - (st.r + st.u_v));
    r.language_residual = std::abs(mi_l - (st.r + st.u_l));
    r.conditional_residual = std::abs((mi_j - mi_l) - (st.u_v + st.s));
    r.pass = bits_to_nats(r.max_residual()) < 1e-6;
    return r;
}

std::string info_state_csv_header()
{
    return "layer,R,U_V,U_L,S,I_tot,clamp_flags";
}

std::string to_csv_row(const InfoState& s)
{
    return std::to_string(s.layer) + "," + fmt6(s.r) + "," + fmt6(s.u_v) + "," + fmt6(s.u_l) + "," + fmt6(s.s) + "," +
           fmt6(s.i_tot) + "," + std::to_string(s.clamp_flags);
}

InfoState parse_csv_row(const std::string& line)
{
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 6) {
        throw ValidationError("trajectory row needs at least 6 fields: '" + line + "'");
    }
    InfoState s;
    try {
        s.layer = std::stoi(cells[0]);
        s.r = std::stod(cells[1]);
        s.u_v = std::stod(cells[2]);
        s.u_l = std::stod(cells[3]);
        s.s = std::stod(cells[4]);
        s.i_tot = std::stod(cells[5]);
        s.clamp_flags = cells.size() > 6 ? static_cast<unsigned>(std::stoul(cells[6])) : 0u;
    } catch (const std::exception&) {
        throw ValidationError("malformed trajectory row: '" + line + "'");
    }
    return s;
}

}  // namespace pidflow
