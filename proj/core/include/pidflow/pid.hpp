#pragma once

#include <span>
#include <string>
#include <vector>

#include "pidflow/types.hpp"

namespace pidflow {

/// Jointly Gaussian model over the concatenation (Z_Q, Z_I, Z_Y):
/// Q = language-side latents, I = vision-side latents, Y = target.
struct JointGaussian {
    int d_q = 0;
    int d_i = 0;
    int d_y = 0;
    Vector mean;
    Matrix cov;
    double ridge = 0.0;
    bool underdetermined = false;  // n <= d_q + d_i + d_y at estimation time

    int dim() const { return d_q + d_i + d_y; }
    std::vector<int> q_dims() const;
    std::vector<int> i_dims() const;
    std::vector<int> y_dims() const;
};

/// Builds a JointGaussian from a known covariance; adds ridge * I and checks
/// symmetry and positive definiteness.
JointGaussian joint_from_covariance(const Matrix& cov, int d_q, int d_i, int d_y, double ridge = 0.0);

/// Maximum-likelihood (1/n) covariance of the stacked latents plus ridge * I.
JointGaussian estimate_joint_cov(const Matrix& z_q, const Matrix& z_i, const Matrix& z_y, double ridge = 1e-6);

/// I(A;B) in nats = 1/2 log(det S_AA det S_BB / det S_(A,B)). Two scalar
/// groups use -1/2 log(1 - rho^2) directly.
double gaussian_mi(const JointGaussian& joint, std::span<const int> group_a, std::span<const int> group_b);

enum ClampFlag : unsigned {
    kClampR = 1u << 0,
    kClampUV = 1u << 1,
    kClampUL = 1u << 2,
    kClampS = 1u << 3,
};

/// PID quadruple at one layer, in bits.
struct InfoState {
    int layer = 0;
    double r = 0.0;
    double u_v = 0.0;
    double u_l = 0.0;
    double s = 0.0;
    double i_tot = 0.0;
    unsigned clamp_flags = 0;
    double clamp_magnitude = 0.0;  // largest clamped negative part, bits

    double component_sum() const { return r + u_v + u_l + s; }
    double additivity_error() const;
};

/// Tolerance for tiny negative components before they are clamped to zero.
inline constexpr double kClampToleranceNats = 1e-6;

/// Minimum-information (MMI) decomposition:
/// R = min(I(Q;Y), I(I;Y)), U by subtraction, S by additivity.
InfoState decompose_pid_mmi(const JointGaussian& joint, int layer = 0);

/// Same algebra from the three mutual informations (nats).
InfoState decompose_from_mi(double mi_language, double mi_vision, double mi_joint, int layer = 0);

struct IdentityReport {
    double vision_residual = 0.0;       // |I(I;Y) - (R + U_V)|, bits
    double language_residual = 0.0;     // |I(Q;Y) - (R + U_L)|, bits
    double conditional_residual = 0.0;  // |I(I;Y|Q) - (U_V + S)|, bits
    bool pass = false;                  // all residuals below 1e-6 nats

    double max_residual() const;
};

IdentityReport check_identities(const InfoState& state, const JointGaussian& joint);

/// CSV row: layer,R,U_V,U_L,S,I_tot,clamp_flags (bits, 6 decimals).
std::string info_state_csv_header();
std::string to_csv_row(const InfoState& s);
InfoState parse_csv_row(const std::string& line);

}  // namespace pidflow
