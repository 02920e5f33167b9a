#include "pidflow/flow.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>

#include <boost/random/mersenne_twister.hpp>
#include <boost/random/normal_distribution.hpp>

#include "pidflow/error.hpp"

namespace pidflow {

namespace {

constexpr Eigen::Index kChunkRows = 8192;
constexpr std::uint32_t kFlowVersion = 1;

double log_cosh(double a)
{
    const double x = std::abs(a);
    return x + std::log1p(std::exp(-2.0 * x)) - std::numbers::ln2;
}

Matrix gather_cols(const Matrix& x, const std::vector<int>& idx)
{
    Matrix out(x.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) {
        out.col(static_cast<Eigen::Index>(k)) = x.col(idx[k]);
    }
    return out;
}

// Hidden layer over a batch: hs (H x m, sample-major) = relu(b1 + w1 xc^T),
// out (m x 2|trans|) = hs^T w2^T + b2.
void coupling_forward(const CouplingLayer& c, const Matrix& xc, Matrix& hs, Matrix& out)
{
    const Eigen::Index hd = c.w1.rows(), m = xc.rows(), nc = xc.cols(), no = c.w2.rows();
    const Matrix w2t = c.w2.transpose();
    hs.resize(hd, m);
    out.resize(m, no);
    for (Eigen::Index i = 0; i < m; ++i) {
        double* __restrict h = hs.col(i).data();
        const double* __restrict b1 = c.b1.data();
        for (Eigen::Index k = 0; k < hd; ++k) h[k] = b1[k];
        for (Eigen::Index q = 0; q < nc; ++q) {
            const double xv = xc(i, q);
            const double* __restrict w = c.w1.col(q).data();
            for (Eigen::Index k = 0; k < hd; ++k) h[k] += w[k] * xv;
        }
        for (Eigen::Index k = 0; k < hd; ++k) h[k] = h[k] > 0.0 ? h[k] : 0.0;
        for (Eigen::Index o = 0; o < no; ++o) {
            const double* __restrict w = w2t.col(o).data();
            double acc = 0.0;
#pragma omp simd reduction(+ : acc)
            for (Eigen::Index k = 0; k < hd; ++k) acc += w[k] * h[k];
            out(i, o) = acc + c.b2(o);
        }
    }
}

// Accumulates parameter gradients into gc given dL/dout; returns dL/dxc.
Matrix coupling_backward(const CouplingLayer& c, const Matrix& xc, const Matrix& hs, const Matrix& dout,
                         CouplingLayer& gc)
{
    const Eigen::Index hd = c.w1.rows(), m = xc.rows(), nc = xc.cols(), no = c.w2.rows();
    const Matrix w2t = c.w2.transpose();
    Matrix gw2t = Matrix::Zero(hd, no);
    Vector dh_buf(hd);
    Matrix dxc(m, nc);
    double* __restrict dh = dh_buf.data();
    double* __restrict gb1 = gc.b1.data();
    for (Eigen::Index i = 0; i < m; ++i) {
        const double* __restrict h = hs.col(i).data();
        for (Eigen::Index k = 0; k < hd; ++k) dh[k] = 0.0;
        for (Eigen::Index o = 0; o < no; ++o) {
            const double dv = dout(i, o);
            const double* __restrict w = w2t.col(o).data();
            double* __restrict gw = gw2t.col(o).data();
            for (Eigen::Index k = 0; k < hd; ++k) {
                gw[k] += dv * h[k];
                dh[k] += dv * w[k];
            }
        }
        for (Eigen::Index k = 0; k < hd; ++k) {
            dh[k] = h[k] > 0.0 ? dh[k] : 0.0;
            gb1[k] += dh[k];
        }
        for (Eigen::Index q = 0; q < nc; ++q) {
            const double xv = xc(i, q);
            const double* __restrict w = c.w1.col(q).data();
            double* __restrict gw = gc.w1.col(q).data();
            double acc = 0.0;
#pragma omp simd reduction(+ : acc)
            for (Eigen::Index k = 0; k < hd; ++k) {
                gw[k] += dh[k] * xv;
                acc += dh[k] * w[k];
            }
            dxc(i, q) = acc;
        }
    }
    gc.w2 += gw2t.transpose();
    gc.b2 += dout.colwise().sum().transpose();
    return dxc;
}

// Computes (log-scale, shift) for the transformed coordinates of one coupling.
void coupling_net(const CouplingLayer& c, const Matrix& xc, Matrix& log_scale, Matrix& shift)
{
    const Eigen::Index t = static_cast<Eigen::Index>(c.trans.size());
    Matrix hs, out;
    coupling_forward(c, xc, hs, out);
    log_scale = (out.leftCols(t).array() / kScaleBound).tanh() * kScaleBound;
    shift = out.rightCols(t);
}

void coupling_apply(const CouplingLayer& c, Matrix& x, Vector& log_det, Direction dir)
{
    for (Eigen::Index r0 = 0; r0 < x.rows(); r0 += kChunkRows) {
        const Eigen::Index rows = std::min(kChunkRows, x.rows() - r0);
        Matrix xc(rows, static_cast<Eigen::Index>(c.cond.size()));
        for (std::size_t k = 0; k < c.cond.size(); ++k) {
            xc.col(static_cast<Eigen::Index>(k)) = x.block(r0, c.cond[k], rows, 1);
        }
        Matrix ls, sh;
        coupling_net(c, xc, ls, sh);
        for (std::size_t k = 0; k < c.trans.size(); ++k) {
            const auto kk = static_cast<Eigen::Index>(k);
            auto col = x.block(r0, c.trans[k], rows, 1).array();
            if (dir == Direction::forward) {
                col = col * ls.col(kk).array().exp() + sh.col(kk).array();
            } else {
                col = (col - sh.col(kk).array()) * (-ls.col(kk).array()).exp();
            }
        }
        const Vector lsum = ls.rowwise().sum();
        if (dir == Direction::forward) {
            log_det.segment(r0, rows) += lsum;
        } else {
            log_det.segment(r0, rows) -= lsum;
        }
    }
}

void sas_apply(const FlowBlock& b, Matrix& x, Vector& log_det, Direction dir)
{
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const double delta = std::exp(b.log_delta(j));
        const double eps = b.epsilon(j);
        const double ld = b.log_delta(j);
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            if (dir == Direction::forward) {
                const double v = x(i, j);
                const double a = delta * std::asinh(v) - eps;
                x(i, j) = std::sinh(a);
                log_det(i) += ld + log_cosh(a) - 0.5 * std::log1p(v * v);
            } else {
                const double y = x(i, j);
                const double v = std::sinh((std::asinh(y) + eps) / delta);
                const double a = delta * std::asinh(v) - eps;
                x(i, j) = v;
                log_det(i) -= ld + log_cosh(a) - 0.5 * std::log1p(v * v);
            }
        }
    }
}

void norm_apply(const FlowBlock& b, Matrix& x, Vector& log_det, Direction dir)
{
    double ld = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const double sd = std::sqrt(b.running_var(j));
        const double g = std::exp(b.log_gamma(j));
        if (dir == Direction::forward) {
            x.col(j) = ((x.col(j).array() - b.running_mean(j)) / sd * g + b.beta(j)).matrix();
        } else {
            x.col(j) = ((x.col(j).array() - b.beta(j)) / g * sd + b.running_mean(j)).matrix();
        }
        ld += b.log_gamma(j) - 0.5 * std::log(b.running_var(j));
    }
    log_det.array() += dir == Direction::forward ? ld : -ld;
}

void standardize(const FlowModel& m, Matrix& x, Vector& log_det, Direction dir)
{
    double ld = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        if (dir == Direction::forward) {
            x.col(j) = ((x.col(j).array() - m.shift(j)) / m.scale(j)).matrix();
        } else {
            x.col(j) = (x.col(j).array() * m.scale(j) + m.shift(j)).matrix();
        }
        ld -= std::log(m.scale(j));
    }
    log_det.array() += dir == Direction::forward ? ld : -ld;
}

// ---- training-mode caches ----------------------------------------------------

struct CouplingCache {
    Matrix xc, hs, th, ls, xt;
};
struct SasCache {
    // Per element: input v, asinh(v), sqrt(1 + v^2), cosh(a), tanh(a).
    Matrix x, as, r, ch, th;
};
struct NormCache {
    Matrix xhat;
    Vector inv_std;
};
struct BlockCache {
    CouplingCache coupling;
    SasCache sas;
    NormCache norm;
};

// ---- binary helpers ----------------------------------------------------------

void put_u32(std::vector<char>& b, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}
void put_u64(std::vector<char>& b, std::uint64_t v)
{
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}
void put_f64(std::vector<char>& b, double v) { put_u64(b, std::bit_cast<std::uint64_t>(v)); }
void put_array(std::vector<char>& b, const double* p, Eigen::Index n)
{
    for (Eigen::Index i = 0; i < n; ++i) put_f64(b, p[i]);
}

class Cursor {
public:
    explicit Cursor(const std::vector<char>& b) : b_(b) {}
    std::uint64_t u(int bytes)
    {
        if (pos_ + static_cast<std::size_t>(bytes) > b_.size()) {
            throw ValidationError("flow file: short read");
        }
        std::uint64_t v = 0;
        for (int i = 0; i < bytes; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
        }
        pos_ += static_cast<std::size_t>(bytes);
        return v;
    }
    std::uint32_t u32() { return static_cast<std::uint32_t>(u(4)); }
    std::uint64_t u64() { return u(8); }
    double f64() { return std::bit_cast<double>(u(8)); }
    void array(double* p, Eigen::Index n)
    {
        for (Eigen::Index i = 0; i < n; ++i) p[i] = f64();
    }
    bool done() const { return pos_ == b_.size(); }

private:
    const std::vector<char>& b_;
    std::size_t pos_ = 0;
};

}  // namespace

FlowModel FlowModel::identity(const FlowArchitecture& arch, std::uint64_t seed)
{
    if (arch.input_dim < 1 || arch.coupled_dims < 0 || arch.coupled_dims > arch.input_dim || arch.num_blocks < 1 ||
        arch.hidden_dim < 1) {
        throw ValidationError("flow architecture out of range");
    }
    FlowModel m;
    m.arch = arch;
    const Eigen::Index d = arch.input_dim;
    m.shift = Vector::Zero(d);
    m.scale = Vector::Ones(d);
    boost::random::mt19937_64 rng(seed);
    boost::random::normal_distribution<double> normal(0.0, 1.0);
    const int c = arch.coupled_dims;
    const int half = c / 2;
    for (int k = 0; k < arch.num_blocks; ++k) {
        FlowBlock b;
        if (c >= 2) {
            CouplingLayer cl;
            std::vector<int> lo, hi;
            for (int i = 0; i < half; ++i) lo.push_back(i);
            for (int i = half; i < c; ++i) hi.push_back(i);
            cl.cond = (k % 2 == 0) ? lo : hi;
            cl.trans = (k % 2 == 0) ? hi : lo;
            const auto in = static_cast<Eigen::Index>(cl.cond.size());
            const auto out = static_cast<Eigen::Index>(2 * cl.trans.size());
            const double he = std::sqrt(2.0 / static_cast<double>(in));
            cl.w1.resize(arch.hidden_dim, in);
            for (Eigen::Index i = 0; i < cl.w1.size(); ++i) cl.w1.data()[i] = he * normal(rng);
            cl.b1 = Vector::Zero(arch.hidden_dim);
            // Zero output layer: every coupling starts as the identity.
            cl.w2 = Matrix::Zero(out, arch.hidden_dim);
            cl.b2 = Vector::Zero(out);
            b.coupling = std::move(cl);
        }
        b.log_delta = Vector::Zero(d);
        b.epsilon = Vector::Zero(d);
        b.log_gamma = Vector::Zero(d);
        b.beta = Vector::Zero(d);
        b.running_mean = Vector::Zero(d);
        b.running_var = Vector::Ones(d);
        m.blocks.push_back(std::move(b));
    }
    return m;
}

FlowModel zeros_like(const FlowModel& model)
{
    FlowModel g = model;
    for_each_parameter(g, [](double* p, Eigen::Index n) { std::fill(p, p + n, 0.0); });
    return g;
}

FlowOutput flow_transform(const FlowModel& model, const Matrix& data, Direction direction)
{
    if (data.cols() != model.arch.input_dim) {
        throw ValidationError("flow_transform: expected " + std::to_string(model.arch.input_dim) + " columns, got " +
                              std::to_string(data.cols()));
    }
    if (!data.allFinite()) {
        throw ValidationError("flow_transform: non-finite input");
    }
    FlowOutput out;
    out.values = data;
    out.log_det = Vector::Zero(data.rows());
    if (direction == Direction::forward) {
        standardize(model, out.values, out.log_det, direction);
        for (const auto& b : model.blocks) {
            if (b.coupling) coupling_apply(*b.coupling, out.values, out.log_det, direction);
            sas_apply(b, out.values, out.log_det, direction);
            norm_apply(b, out.values, out.log_det, direction);
        }
    } else {
        for (auto it = model.blocks.rbegin(); it != model.blocks.rend(); ++it) {
            norm_apply(*it, out.values, out.log_det, direction);
            sas_apply(*it, out.values, out.log_det, direction);
            if (it->coupling) coupling_apply(*it->coupling, out.values, out.log_det, direction);
        }
        standardize(model, out.values, out.log_det, direction);
    }
    return out;
}

double flow_nll(const FlowModel& model, const Matrix& data)
{
    const FlowOutput f = flow_transform(model, data, Direction::forward);
    const double d = static_cast<double>(data.cols());
    const double quad = 0.5 * f.values.squaredNorm() / static_cast<double>(data.rows());
    return quad - f.log_det.mean() + 0.5 * d * std::log(2.0 * std::numbers::pi);
}

double flow_batch_loss(FlowModel& model, const Matrix& standardized, FlowModel* grad, double momentum)
{
    const Eigen::Index m = standardized.rows();
    const Eigen::Index d = standardized.cols();
    const double inv_m = 1.0 / static_cast<double>(m);
    Matrix x = standardized;
    double log_det_sum = 0.0;
    std::vector<BlockCache> caches(model.blocks.size());

    for (std::size_t k = 0; k < model.blocks.size(); ++k) {
        FlowBlock& b = model.blocks[k];
        BlockCache& cache = caches[k];
        if (b.coupling) {
            const CouplingLayer& c = *b.coupling;
            auto& cc = cache.coupling;
            const auto t = static_cast<Eigen::Index>(c.trans.size());
            cc.xc = gather_cols(x, c.cond);
            Matrix out;
            coupling_forward(c, cc.xc, cc.hs, out);
            cc.th = (out.leftCols(t).array() / kScaleBound).tanh();
            cc.ls = cc.th * kScaleBound;
            cc.xt = gather_cols(x, c.trans);
            for (Eigen::Index q = 0; q < t; ++q) {
                x.col(c.trans[static_cast<std::size_t>(q)]) =
                    (cc.xt.col(q).array() * cc.ls.col(q).array().exp() + out.col(t + q).array()).matrix();
            }
            log_det_sum += cc.ls.sum();
        }
        {
            auto& sc = cache.sas;
            sc.x = x;
            sc.as.resize(m, d);
            sc.r.resize(m, d);
            sc.ch.resize(m, d);
            sc.th.resize(m, d);
            for (Eigen::Index j = 0; j < d; ++j) {
                const double delta = std::exp(b.log_delta(j));
                const double eps = b.epsilon(j);
                {
                    // Vectorized path; columns reaching |a| >= 30 take the scalar loop below.
                    const auto v = sc.x.col(j).array();
                    auto r = sc.r.col(j).array();
                    auto as = sc.as.col(j).array();
                    r = (1.0 + v.square()).sqrt();
                    as = (v.abs() + r).log() * v.sign();
                    // sign(0) = 0 matches copysign(log(1), 0) = 0.
                    const Eigen::ArrayXd a = delta * as - eps;
                    if (a.abs().maxCoeff() < 30.0) {
                        const Eigen::ArrayXd e = a.exp();
                        const Eigen::ArrayXd ei = e.inverse();
                        const Eigen::ArrayXd sh = 0.5 * (e - ei);
                        auto ch = sc.ch.col(j).array();
                        ch = 0.5 * (e + ei);
                        sc.th.col(j).array() = sh / ch;
                        x.col(j).array() = sh;
                        log_det_sum += static_cast<double>(m) * b.log_delta(j) + (ch / r).log().sum();
                        continue;
                    }
                }
                for (Eigen::Index i = 0; i < m; ++i) {
                    const double v = sc.x(i, j);
                    const double r = std::sqrt(1.0 + v * v);
                    // asinh(v) = sign(v) log(|v| + r), stable for negative v.
                    const double as = std::copysign(std::log(std::abs(v) + r), v);
                    const double a = delta * as - b.epsilon(j);
                    double sh, ch, lch;
                    if (std::abs(a) < 30.0) {
                        const double e = std::exp(a);
                        sh = 0.5 * (e - 1.0 / e);
                        ch = 0.5 * (e + 1.0 / e);
                        lch = std::log(ch / r);
                    } else {
                        sh = std::sinh(a);
                        ch = std::cosh(a);
                        lch = log_cosh(a) - std::log(r);
                    }
                    sc.as(i, j) = as;
                    sc.r(i, j) = r;
                    sc.ch(i, j) = ch;
                    sc.th(i, j) = sh / ch;
                    x(i, j) = sh;
                    log_det_sum += b.log_delta(j) + lch;
                }
            }
        }
        {
            auto& nc = cache.norm;
            nc.xhat.resize(m, d);
            nc.inv_std.resize(d);
            for (Eigen::Index j = 0; j < d; ++j) {
                const double mu = x.col(j).mean();
                const double var = (x.col(j).array() - mu).square().mean() + kNormEpsilon;
                const double is = 1.0 / std::sqrt(var);
                nc.inv_std(j) = is;
                nc.xhat.col(j) = (x.col(j).array() - mu) * is;
                const double g = std::exp(b.log_gamma(j));
                x.col(j) = (nc.xhat.col(j).array() * g + b.beta(j)).matrix();
                log_det_sum += static_cast<double>(m) * (b.log_gamma(j) + 0.5 * std::log(is * is));
                if (momentum > 0.0) {
                    b.running_mean(j) = (1.0 - momentum) * b.running_mean(j) + momentum * mu;
                    b.running_var(j) = (1.0 - momentum) * b.running_var(j) + momentum * var;
                }
            }
        }
    }

    const double loss = (0.5 * x.squaredNorm() - log_det_sum) * inv_m +
                        0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi);
    if (grad == nullptr) {
        return loss;
    }

    Matrix g = x * inv_m;  // dL/dz
    for (std::size_t kk = model.blocks.size(); kk-- > 0;) {
        const FlowBlock& b = model.blocks[kk];
        FlowBlock& gb = grad->blocks[kk];
        const BlockCache& cache = caches[kk];

        {  // normalization
            const auto& nc = cache.norm;
            for (Eigen::Index j = 0; j < d; ++j) {
                const double gamma = std::exp(b.log_gamma(j));
                const auto gj = g.col(j).array();
                const auto xh = nc.xhat.col(j).array();
                gb.log_gamma(j) += (gj * xh).sum() * gamma - 1.0;
                gb.beta(j) += gj.sum();
                const Eigen::ArrayXd dxh = gj * gamma;
                const double s1 = dxh.sum();
                const double s2 = (dxh * xh).sum();
                const double is = nc.inv_std(j);
                g.col(j) = ((dxh * static_cast<double>(m) - s1 - xh * s2) * (is * inv_m) + xh * (is * inv_m)).matrix();
            }
        }
        {  // sinh-arcsinh
            const auto& sc = cache.sas;
            for (Eigen::Index j = 0; j < d; ++j) {
                const double delta = std::exp(b.log_delta(j));
                double gld = 0.0, geps = 0.0;
                for (Eigen::Index i = 0; i < m; ++i) {
                    const double v = sc.x(i, j);
                    const double ch = sc.ch(i, j);
                    const double tha = sc.th(i, j);
                    const double as = sc.as(i, j);
                    const double r = sc.r(i, j);
                    const double r2 = r * r;
                    const double gy = g(i, j);
                    gld += gy * ch * delta * as - inv_m * (1.0 + tha * delta * as);
                    geps += -gy * ch + tha * inv_m;
                    g(i, j) = gy * ch * delta / r - inv_m * (tha * delta / r - v / r2);
                }
                gb.log_delta(j) += gld;
                gb.epsilon(j) += geps;
            }
        }
        if (b.coupling) {
            const CouplingLayer& c = *b.coupling;
            CouplingLayer& gc = *gb.coupling;
            const auto& cc = cache.coupling;
            const auto t = static_cast<Eigen::Index>(c.trans.size());
            Matrix dout(m, 2 * t);
            for (Eigen::Index q = 0; q < t; ++q) {
                const int col = c.trans[static_cast<std::size_t>(q)];
                const Eigen::ArrayXd e = cc.ls.col(q).array().exp();
                const Eigen::ArrayXd gy = g.col(col).array();
                const Eigen::ArrayXd dls = gy * cc.xt.col(q).array() * e - inv_m;
                dout.col(q) = (dls * (1.0 - cc.th.col(q).array().square())).matrix();
                dout.col(t + q) = gy.matrix();
                g.col(col) = (gy * e).matrix();
            }
            const Matrix dxc = coupling_backward(c, cc.xc, cc.hs, dout, gc);
            for (std::size_t q = 0; q < c.cond.size(); ++q) {
                g.col(c.cond[q]) += dxc.col(static_cast<Eigen::Index>(q));
            }
        }
    }
    return loss;
}

void freeze_normalization(FlowModel& model, const Matrix& data)
{
    Matrix x = data;
    Vector log_det = Vector::Zero(data.rows());
    standardize(model, x, log_det, Direction::forward);
    for (auto& b : model.blocks) {
        if (b.coupling) coupling_apply(*b.coupling, x, log_det, Direction::forward);
        sas_apply(b, x, log_det, Direction::forward);
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            const double mu = x.col(j).mean();
            b.running_mean(j) = mu;
            b.running_var(j) = (x.col(j).array() - mu).square().mean() + kNormEpsilon;
        }
        norm_apply(b, x, log_det, Direction::forward);
    }
}

std::vector<char> encode_flow(const FlowModel& m)
{
    std::vector<char> b;
    b.insert(b.end(), {'P', 'I', 'D', 'F'});
    put_u32(b, kFlowVersion);
    put_u32(b, static_cast<std::uint32_t>(m.arch.input_dim));
    put_u32(b, static_cast<std::uint32_t>(m.arch.coupled_dims));
    put_u32(b, static_cast<std::uint32_t>(m.arch.num_blocks));
    put_u32(b, static_cast<std::uint32_t>(m.arch.hidden_dim));
    put_u64(b, m.train_config.seed);
    put_u32(b, static_cast<std::uint32_t>(m.train_config.steps));
    put_u32(b, static_cast<std::uint32_t>(m.train_config.batch_size));
    put_f64(b, m.train_config.learning_rate);
    put_f64(b, m.train_config.weight_decay);
    put_f64(b, m.train_config.grad_clip);
    put_f64(b, m.initial_nll);
    put_f64(b, m.final_nll);
    put_u32(b, m.reverted_to_initial ? 1u : 0u);
    put_array(b, m.shift.data(), m.shift.size());
    put_array(b, m.scale.data(), m.scale.size());
    for (const auto& blk : m.blocks) {
        if (blk.coupling) {
            const auto& c = *blk.coupling;
            put_array(b, c.w1.data(), c.w1.size());
            put_array(b, c.b1.data(), c.b1.size());
            put_array(b, c.w2.data(), c.w2.size());
            put_array(b, c.b2.data(), c.b2.size());
        }
        put_array(b, blk.log_delta.data(), blk.log_delta.size());
        put_array(b, blk.epsilon.data(), blk.epsilon.size());
        put_array(b, blk.log_gamma.data(), blk.log_gamma.size());
        put_array(b, blk.beta.data(), blk.beta.size());
        put_array(b, blk.running_mean.data(), blk.running_mean.size());
        put_array(b, blk.running_var.data(), blk.running_var.size());
    }
    put_u32(b, static_cast<std::uint32_t>(m.nll_curve.size()));
    put_array(b, m.nll_curve.data(), static_cast<Eigen::Index>(m.nll_curve.size()));
    return b;
}

FlowModel decode_flow(const std::vector<char>& bytes)
{
    if (bytes.size() < 4 || std::memcmp(bytes.data(), "PIDF", 4) != 0) {
        throw ValidationError("flow file: bad magic");
    }
    const std::vector<char> body(bytes.begin() + 4, bytes.end());
    Cursor c(body);
    if (c.u32() != kFlowVersion) {
        throw ValidationError("flow file: version mismatch");
    }
    FlowArchitecture arch;
    arch.input_dim = static_cast<int>(c.u32());
    arch.coupled_dims = static_cast<int>(c.u32());
    arch.num_blocks = static_cast<int>(c.u32());
    arch.hidden_dim = static_cast<int>(c.u32());
    if (arch.input_dim < 1 || arch.input_dim > 1 << 16 || arch.num_blocks < 1 || arch.num_blocks > 1024 ||
        arch.hidden_dim < 1 || arch.hidden_dim > 1 << 16) {
        throw ValidationError("flow file: implausible dimensions");
    }
    FlowModel m = FlowModel::identity(arch, 0);
    m.train_config.seed = c.u64();
    m.train_config.steps = static_cast<int>(c.u32());
    m.train_config.batch_size = static_cast<int>(c.u32());
    m.train_config.learning_rate = c.f64();
    m.train_config.weight_decay = c.f64();
    m.train_config.grad_clip = c.f64();
    m.initial_nll = c.f64();
    m.final_nll = c.f64();
    m.reverted_to_initial = c.u32() != 0;
    c.array(m.shift.data(), m.shift.size());
    c.array(m.scale.data(), m.scale.size());
    for (auto& blk : m.blocks) {
        if (blk.coupling) {
            auto& cl = *blk.coupling;
            c.array(cl.w1.data(), cl.w1.size());
            c.array(cl.b1.data(), cl.b1.size());
            c.array(cl.w2.data(), cl.w2.size());
            c.array(cl.b2.data(), cl.b2.size());
        }
        c.array(blk.log_delta.data(), blk.log_delta.size());
        c.array(blk.epsilon.data(), blk.epsilon.size());
        c.array(blk.log_gamma.data(), blk.log_gamma.size());
        c.array(blk.beta.data(), blk.beta.size());
        c.array(blk.running_mean.data(), blk.running_mean.size());
        c.array(blk.running_var.data(), blk.running_var.size());
    }
    const std::uint32_t curve = c.u32();
    if (static_cast<std::size_t>(curve) * 8 > body.size()) {
        throw ValidationError("flow file: short read");
    }
    m.nll_curve.resize(curve);
    c.array(m.nll_curve.data(), static_cast<Eigen::Index>(curve));
    if (!c.done()) {
        throw ValidationError("flow file: trailing bytes");
    }
    return m;
}

void save_flow(const FlowModel& model, const std::filesystem::path& path)
{
    const auto bytes = encode_flow(model);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open for writing: " + path.string());
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("write failed: " + path.string());
    }
}

FlowModel load_flow(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("missing file: " + path.string());
    }
    const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_flow(bytes);
}

}  // namespace pidflow
