#include "nuvssm/gaussian.hpp"

#include <cmath>
#include <string>

namespace nuvssm {
namespace {

using linalg::symmetrize;

// Inputs are expected to be symmetric up to round-off; anything worse than
// this is a caller bug rather than accumulated error.
constexpr double kGrossAsymmetry = 1e-6;

void require(bool ok, const char* what)
{
    if (!ok) {
        throw DimensionError(what);
    }
}

Matrix checked_symmetric(const Matrix& m, const char* what)
{
    if (m.rows() != m.cols()) {
        throw DimensionError(std::string(what) + ": matrix is not square");
    }
    if (!m.allFinite()) {
        throw std::invalid_argument(std::string(what) + ": non-finite entries");
    }
    if (linalg::asymmetry(m) > kGrossAsymmetry) {
        throw std::invalid_argument(std::string(what) + ": matrix is not symmetric");
    }
    const double scale = m.size() > 0 ? m.diagonal().cwiseAbs().maxCoeff() : 0.0;
    if (m.size() > 0 && m.diagonal().minCoeff() < -tolerances().psd * scale) {
        throw std::invalid_argument(std::string(what) + ": negative diagonal entry");
    }
    return symmetrize(m);
}

}  // namespace

// ---------------------------------------------------------------------------

GaussianMoment::GaussianMoment(Vector mean, Matrix cov)
    : mean_(std::move(mean)), cov_(checked_symmetric(cov, "GaussianMoment"))
{
    require(cov_.rows() == mean_.size(), "GaussianMoment: mean/cov dimension mismatch");
    if (!mean_.allFinite()) {
        throw std::invalid_argument("GaussianMoment: non-finite mean");
    }
}

GaussianMoment GaussianMoment::deterministic(Vector mean)
{
    const Index n = mean.size();
    return GaussianMoment(std::move(mean), Matrix::Zero(n, n));
}

GaussianMoment GaussianMoment::standard(Index dim)
{
    return GaussianMoment(Vector::Zero(dim), Matrix::Identity(dim, dim));
}

GaussianInfo GaussianMoment::to_info() const
{
    if (linalg::is_zero(cov_)) {
        throw SingularMatrixError("deterministic message has no information form");
    }
    Matrix w = linalg::spd_inverse(cov_);
    Vector xi = w * mean_;
    return GaussianInfo(std::move(xi), std::move(w));
}

GaussianInfo::GaussianInfo(Vector xi, Matrix prec)
    : xi_(std::move(xi)), prec_(checked_symmetric(prec, "GaussianInfo"))
{
    require(prec_.rows() == xi_.size(), "GaussianInfo: xi/prec dimension mismatch");
    if (!xi_.allFinite()) {
        throw std::invalid_argument("GaussianInfo: non-finite xi");
    }
}

GaussianInfo GaussianInfo::non_informative(Index dim)
{
    return GaussianInfo(Vector::Zero(dim), Matrix::Zero(dim, dim));
}

bool GaussianInfo::is_non_informative() const
{
    return linalg::is_zero(prec_) && linalg::is_zero(xi_);
}

GaussianMoment GaussianInfo::to_moment() const
{
    if (linalg::is_zero(prec_)) {
        throw SingularMatrixError("non-informative message has no moment form");
    }
    Matrix v = linalg::spd_inverse(prec_);
    Vector m = v * xi_;
    return GaussianMoment(std::move(m), std::move(v));
}

Marginal::Marginal(Vector m, Matrix v) : mean(std::move(m)), cov(symmetrize(v))
{
    require(cov.rows() == mean.size() && cov.cols() == mean.size(),
            "Marginal: mean/cov dimension mismatch");
}

DualMarginal::DualMarginal(Vector xi, Matrix w) : dxi(std::move(xi)), dprec(symmetrize(w))
{
    require(dprec.rows() == dxi.size() && dprec.cols() == dxi.size(),
            "DualMarginal: dimension mismatch");
}

DualMarginal DualMarginal::zero(Index dim)
{
    return DualMarginal(Vector::Zero(dim), Matrix::Zero(dim, dim));
}

// ---------------------------------------------------------------------------

GaussianInfo equality_node(const GaussianInfo& a, const GaussianInfo& b)
{
    require(a.dim() == b.dim(), "equality_node: dimension mismatch");
    return GaussianInfo(a.xi() + b.xi(), a.prec() + b.prec());
}

Vector equality_dual_mean(const Vector& dxi_y, const Vector& dxi_z)
{
    require(dxi_y.size() == dxi_z.size(), "equality_dual_mean: dimension mismatch");
    return dxi_y + dxi_z;
}

GaussianMoment adder_node_forward(const GaussianMoment& x, const GaussianMoment& y)
{
    require(x.dim() == y.dim(), "adder_node_forward: dimension mismatch");
    return GaussianMoment(x.mean() + y.mean(), x.cov() + y.cov());
}

GaussianMoment adder_node_backward(const GaussianMoment& z_bwd, const GaussianMoment& y_fwd)
{
    require(z_bwd.dim() == y_fwd.dim(), "adder_node_backward: dimension mismatch");
    return GaussianMoment(z_bwd.mean() - y_fwd.mean(), z_bwd.cov() + y_fwd.cov());
}

GaussianMoment matmul_node(const GaussianMoment& x_fwd, const Matrix& a)
{
    require(a.cols() == x_fwd.dim(), "matmul_node: shape mismatch");
    return GaussianMoment(a * x_fwd.mean(), symmetrize(a * x_fwd.cov() * a.transpose()));
}

GaussianInfo matmul_backward(const GaussianInfo& y_bwd, const Matrix& a)
{
    require(a.rows() == y_bwd.dim(), "matmul_backward: shape mismatch");
    return GaussianInfo(a.transpose() * y_bwd.xi(), symmetrize(a.transpose() * y_bwd.prec() * a));
}

DualMarginal matmul_dual(const DualMarginal& y_dual, const Matrix& a)
{
    require(a.rows() == y_dual.dxi.size(), "matmul_dual: shape mismatch");
    return DualMarginal(a.transpose() * y_dual.dxi, a.transpose() * y_dual.dprec * a);
}

Marginal matmul_marginal(const Marginal& x, const Matrix& a)
{
    require(a.cols() == x.mean.size(), "matmul_marginal: shape mismatch");
    return Marginal(a * x.mean, a * x.cov * a.transpose());
}

// ---------------------------------------------------------------------------

Marginal marginal_from_dual(const GaussianMoment& fwd, const DualMarginal& dual)
{
    require(fwd.dim() == dual.dxi.size(), "marginal_from_dual: dimension mismatch");
    const Matrix& v = fwd.cov();
    return Marginal(fwd.mean() - v * dual.dxi, v - v * dual.dprec * v);
}

DualMarginal dual_from_backward(const GaussianInfo& bwd, const Marginal& marginal)
{
    require(bwd.dim() == marginal.mean.size(), "dual_from_backward: dimension mismatch");
    const Matrix& w = bwd.prec();
    return DualMarginal(w * marginal.mean - bwd.xi(), w - w * marginal.cov * w);
}

DualMarginal dual_from_forward(const GaussianInfo& fwd, const Marginal& marginal)
{
    require(fwd.dim() == marginal.mean.size(), "dual_from_forward: dimension mismatch");
    const Matrix& w = fwd.prec();
    return DualMarginal(fwd.xi() - w * marginal.mean, w - w * marginal.cov * w);
}

EdgeMarginal edge_marginal(const GaussianMoment& fwd, const GaussianMoment& bwd)
{
    require(fwd.dim() == bwd.dim(), "edge_marginal: dimension mismatch");
    Matrix dprec = linalg::spd_inverse(fwd.cov() + bwd.cov());
    Vector dxi = dprec * (fwd.mean() - bwd.mean());
    DualMarginal dual(std::move(dxi), std::move(dprec));
    return {marginal_from_dual(fwd, dual), dual};
}

EdgeMarginal edge_marginal(const GaussianMoment& fwd, const GaussianInfo& bwd)
{
    require(fwd.dim() == bwd.dim(), "edge_marginal: dimension mismatch");
    const Index n = fwd.dim();
    if (linalg::is_zero(bwd.prec())) {
        if (!linalg::is_zero(bwd.xi())) {
            throw std::invalid_argument("edge_marginal: zero precision with nonzero xi");
        }
        return {Marginal(fwd.mean(), fwd.cov()), DualMarginal::zero(n)};
    }
    // (V_f + V_b)^-1 = (I + W_b V_f)^-1 W_b, valid for singular W_b or V_f.
    const Matrix m = Matrix::Identity(n, n) + bwd.prec() * fwd.cov();
    Matrix rhs(n, n + 1);
    rhs.leftCols(n) = bwd.prec();
    rhs.col(n) = bwd.prec() * fwd.mean() - bwd.xi();
    const Matrix sol = linalg::general_solve(m, rhs);
    DualMarginal dual(sol.col(n), sol.leftCols(n));
    return {marginal_from_dual(fwd, dual), dual};
}

EdgeMarginal edge_marginal(const GaussianInfo& fwd, const GaussianInfo& bwd)
{
    require(fwd.dim() == bwd.dim(), "edge_marginal: dimension mismatch");
    const Matrix w = fwd.prec() + bwd.prec();
    if (linalg::is_zero(w)) {
        throw SingularMatrixError("edge_marginal: both messages are non-informative");
    }
    Matrix v = linalg::spd_inverse(w);
    Vector m = v * (fwd.xi() + bwd.xi());
    Marginal marginal(std::move(m), std::move(v));
    return {marginal, dual_from_forward(fwd, marginal)};
}

// ---------------------------------------------------------------------------

GaussianMoment observation_block_forward(const GaussianMoment& x_fwd, const Matrix& a,
                                         const GaussianMoment& y_bwd)
{
    require(a.cols() == x_fwd.dim() && a.rows() == y_bwd.dim(),
            "observation_block_forward: shape mismatch");
    const Matrix& v = x_fwd.cov();
    const Matrix av = a * v;
    const Matrix s = y_bwd.cov() + av * a.transpose();
    // G A V and G (m_y - A m), solved together.
    Matrix rhs(a.rows(), v.cols() + 1);
    rhs.leftCols(v.cols()) = av;
    rhs.col(v.cols()) = y_bwd.mean() - a * x_fwd.mean();
    const Matrix sol = linalg::spd_solve(s, rhs);
    const Matrix gav = sol.leftCols(v.cols());
    return GaussianMoment(x_fwd.mean() + av.transpose() * sol.col(v.cols()),
                          symmetrize(v - av.transpose() * gav));
}

GaussianMoment observation_block_forward(const GaussianMoment& x_fwd, const Matrix& a,
                                         const GaussianInfo& y_bwd)
{
    require(a.cols() == x_fwd.dim() && a.rows() == y_bwd.dim(),
            "observation_block_forward: shape mismatch");
    if (linalg::is_zero(y_bwd.prec())) {
        return x_fwd;
    }
    const Index l = a.rows();
    const Matrix& v = x_fwd.cov();
    const Matrix av = a * v;
    const Matrix s = Matrix::Identity(l, l) + y_bwd.prec() * av * a.transpose();
    Matrix rhs(l, v.cols() + 1);
    rhs.leftCols(v.cols()) = y_bwd.prec() * av;
    rhs.col(v.cols()) = y_bwd.xi() - y_bwd.prec() * (a * x_fwd.mean());
    const Matrix sol = linalg::general_solve(s, rhs);
    return GaussianMoment(x_fwd.mean() + av.transpose() * sol.col(v.cols()),
                          symmetrize(v - av.transpose() * sol.leftCols(v.cols())));
}

namespace {

DualMarginal dual_with_f(const DualMarginal& z_dual, const Matrix& f, const Matrix& a,
                         const Vector& residual_term, const Matrix& gain_term)
{
    return DualMarginal(f.transpose() * z_dual.dxi + a.transpose() * residual_term,
                        f.transpose() * z_dual.dprec * f + gain_term);
}

}  // namespace

DualMarginal observation_block_dual_backward(const DualMarginal& z_dual, const Matrix& a,
                                             const GaussianMoment& y_bwd,
                                             const ObservationCache& cache,
                                             BlockVariant variant)
{
    const Index n = a.cols();
    require(z_dual.dxi.size() == n && a.rows() == y_bwd.dim(),
            "observation_block_dual_backward: shape mismatch");
    const Matrix eye = Matrix::Identity(n, n);
    if (variant == BlockVariant::OutputSide) {
        if (!cache.z_fwd) {
            throw std::invalid_argument(
                "observation_block_dual_backward: missing cached forward message on Z");
        }
        const GaussianMoment& z = *cache.z_fwd;
        const Matrix w_y = linalg::spd_inverse(y_bwd.cov());
        const Matrix wa = w_y * a;
        const Matrix f = eye - z.cov() * a.transpose() * wa;
        const Vector residual = w_y * (a * z.mean() - y_bwd.mean());
        return dual_with_f(z_dual, f, a, residual, a.transpose() * wa * f);
    }
    if (!cache.x_fwd) {
        throw std::invalid_argument(
            "observation_block_dual_backward: missing cached forward message on X");
    }
    const GaussianMoment& x = *cache.x_fwd;
    const Matrix s = y_bwd.cov() + a * x.cov() * a.transpose();
    Matrix rhs(a.rows(), n + 1);
    rhs.leftCols(n) = a;
    rhs.col(n) = a * x.mean() - y_bwd.mean();
    const Matrix sol = linalg::spd_solve(s, rhs);  // [G A, G (A m_x - m_y)]
    const Matrix ga = sol.leftCols(n);
    const Matrix f = eye - x.cov() * a.transpose() * ga;
    return dual_with_f(z_dual, f, a, sol.col(n), symmetrize(a.transpose() * ga));
}

DualMarginal observation_block_dual_backward(const DualMarginal& z_dual, const Matrix& a,
                                             const GaussianInfo& y_bwd,
                                             const ObservationCache& cache)
{
    const Index n = a.cols();
    require(z_dual.dxi.size() == n && a.rows() == y_bwd.dim(),
            "observation_block_dual_backward: shape mismatch");
    if (!cache.z_fwd) {
        throw std::invalid_argument(
            "observation_block_dual_backward: missing cached forward message on Z");
    }
    const GaussianMoment& z = *cache.z_fwd;
    const Matrix wa = y_bwd.prec() * a;
    const Matrix f = Matrix::Identity(n, n) - z.cov() * a.transpose() * wa;
    const Vector residual = wa * z.mean() - y_bwd.xi();
    return dual_with_f(z_dual, f, a, residual, a.transpose() * wa * f);
}

// ---------------------------------------------------------------------------

namespace {

double direction_sign(Direction d)
{
    return d == Direction::Forward ? 1.0 : -1.0;
}

struct HTerms {
    Matrix h;        // H
    Vector h_xi_y;   // H xi_Y
};

// H = V_Y (I + M V_Y)^-1 = (I + V_Y M)^-1 V_Y and H xi_Y = (I + V_Y M)^-1 m_Y,
// with M = A^T W A.
HTerms h_terms(const Matrix& w, const Matrix& a, const GaussianMoment& u)
{
    const Index m = a.cols();
    const Matrix mm = a.transpose() * w * a;
    const Matrix lhs = Matrix::Identity(m, m) + u.cov() * mm;
    Matrix rhs(m, m + 1);
    rhs.leftCols(m) = u.cov();
    rhs.col(m) = u.mean();
    const Matrix sol = linalg::general_solve(lhs, rhs);
    return {symmetrize(sol.leftCols(m)), sol.col(m)};
}

}  // namespace

GaussianInfo input_block_forward_info(const GaussianInfo& x, const Matrix& a,
                                      const GaussianInfo& u, Direction direction)
{
    require(a.rows() == x.dim() && a.cols() == u.dim(), "input_block_forward_info: shape mismatch");
    const Matrix& w = x.prec();
    const Matrix h = linalg::spd_inverse(u.prec() + a.transpose() * w * a);
    const Matrix wa = w * a;
    const Vector xi = x.xi() + wa * h * (direction_sign(direction) * u.xi() - a.transpose() * x.xi());
    return GaussianInfo(xi, symmetrize(w - wa * h * wa.transpose()));
}

GaussianInfo input_block_forward_info(const GaussianInfo& x, const Matrix& a,
                                      const GaussianMoment& u, Direction direction)
{
    require(a.rows() == x.dim() && a.cols() == u.dim(), "input_block_forward_info: shape mismatch");
    const Matrix& w = x.prec();
    const HTerms t = h_terms(w, a, u);
    const Matrix wa = w * a;
    const Vector xi =
        x.xi() + wa * (direction_sign(direction) * t.h_xi_y - t.h * (a.transpose() * x.xi()));
    return GaussianInfo(xi, symmetrize(w - wa * t.h * wa.transpose()));
}

Marginal input_block_marginal(const Marginal& known, const Matrix& a, const GaussianMoment& u,
                              const InputBlockCache& cache, BlockVariant variant,
                              Direction direction)
{
    const Index n = known.mean.size();
    require(a.rows() == n && a.cols() == u.dim(), "input_block_marginal: shape mismatch");
    const double sign = direction_sign(direction);
    const Matrix eye = Matrix::Identity(n, n);
    if (variant == BlockVariant::OutputSide) {
        if (!cache.outgoing) {
            throw std::invalid_argument("input_block_marginal: missing outgoing message");
        }
        const GaussianInfo& out = *cache.outgoing;
        const Matrix avat = a * u.cov() * a.transpose();
        const Matrix ft = eye - out.prec() * avat;
        const Vector mean = ft.transpose() * known.mean +
                            a * (u.cov() * (a.transpose() * out.xi()) - sign * u.mean());
        return Marginal(mean, ft.transpose() * known.cov * ft + avat * ft);
    }
    if (!cache.incoming) {
        throw std::invalid_argument("input_block_marginal: missing incoming message");
    }
    const GaussianInfo& in = *cache.incoming;
    const HTerms t = h_terms(in.prec(), a, u);
    const Matrix ahat = a * t.h * a.transpose();
    const Matrix ft = eye - in.prec() * ahat;
    const Vector mean =
        ft.transpose() * known.mean + a * (t.h * (a.transpose() * in.xi()) - sign * t.h_xi_y);
    return Marginal(mean, ft.transpose() * known.cov * ft + ahat);
}

}  // namespace nuvssm
