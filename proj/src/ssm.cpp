#include "nuvssm/ssm.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "ssm_detail.hpp"

namespace nuvssm {
namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

void fail(const std::string& what)
{
    throw std::invalid_argument("StateSpaceModel: " + what);
}

std::string shape(const Matrix& m)
{
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

// Symmetric PSD square root via eigendecomposition (columns may be dropped
// for zero eigenvalues).
Matrix psd_sqrt(const Matrix& s)
{
    if (s.size() == 0 || linalg::is_zero(s)) {
        return Matrix::Zero(s.rows(), 0);
    }
    Eigen::SelfAdjointEigenSolver<Matrix> eig(linalg::symmetrize(s));
    const Vector ev = eig.eigenvalues().cwiseMax(0.0);
    const double cut = 1e-14 * ev.maxCoeff();
    std::vector<Index> keep;
    for (Index i = 0; i < ev.size(); ++i) {
        if (ev(i) > cut) {
            keep.push_back(i);
        }
    }
    Matrix r(s.rows(), static_cast<Index>(keep.size()));
    for (std::size_t j = 0; j < keep.size(); ++j) {
        r.col(static_cast<Index>(j)) = eig.eigenvectors().col(keep[j]) * std::sqrt(ev(keep[j]));
    }
    return r;
}

}  // namespace

InitialState InitialState::deterministic(Vector mean)
{
    return {InitialKind::Deterministic, GaussianMoment::deterministic(std::move(mean))};
}

InitialState InitialState::gaussian(GaussianMoment prior)
{
    return {InitialKind::Gaussian, std::move(prior)};
}

void StateSpaceModel::validate() const
{
    const Index n = A.rows();
    if (n == 0 || A.cols() != n) {
        fail("A must be square and non-empty, got " + shape(A));
    }
    if (B.rows() != n) {
        fail("B must have " + std::to_string(n) + " rows, got " + shape(B));
    }
    if (C.cols() != n || C.rows() == 0) {
        fail("C must have " + std::to_string(n) + " columns, got " + shape(C));
    }
    const Index l = C.rows();
    const Index m = B.cols();
    if (!A.allFinite() || !B.allFinite() || !C.allFinite()) {
        fail("non-finite entries in A, B or C");
    }
    if (obs_noise.rows() != l || obs_noise.cols() != l || !obs_noise.allFinite()) {
        fail("obs_noise must be " + std::to_string(l) + "x" + std::to_string(l));
    }
    if (linalg::asymmetry(obs_noise) > 1e-10) {
        fail("obs_noise is not symmetric");
    }
    if (l == 1 ? !(obs_noise(0, 0) > 0.0) : Eigen::LLT<Matrix>(obs_noise).info() != Eigen::Success) {
        fail("obs_noise must be positive definite");
    }
    if (input_cov.rows() != m || input_cov.cols() != m || !input_cov.allFinite()) {
        fail("input_cov must be " + std::to_string(m) + "x" + std::to_string(m));
    }
    if (m > 0 && (linalg::asymmetry(input_cov) > 1e-10 || !linalg::is_psd(input_cov))) {
        fail("input_cov must be symmetric positive semidefinite");
    }
    if (horizon < 1) {
        fail("horizon must be at least 1");
    }
    if (initial.kind != InitialKind::NonInformative) {
        if (!initial.prior || initial.prior->dim() != n) {
            fail("initial prior must have dimension " + std::to_string(n));
        }
        if (initial.kind == InitialKind::Gaussian && !linalg::is_psd(initial.prior->cov())) {
            fail("initial covariance must be positive semidefinite");
        }
    }
    for (std::size_t i = 0; i < nuv_inputs.size(); ++i) {
        const Index j = nuv_inputs[i];
        if (j < 0 || j >= m) {
            fail("NUV input column " + std::to_string(j) + " out of range");
        }
        for (std::size_t i2 = 0; i2 < i; ++i2) {
            if (nuv_inputs[i2] == j) {
                fail("duplicate NUV input column " + std::to_string(j));
            }
        }
        for (Index c = 0; c < m; ++c) {
            if (c != j && (input_cov(j, c) != 0.0 || input_cov(c, j) != 0.0)) {
                fail("NUV input column " + std::to_string(j) + " is correlated with column " +
                     std::to_string(c));
            }
        }
    }
    if (nuv_first_step < 0) {
        fail("nuv_first_step must be non-negative");
    }
    if (nuv_output && l != 1) {
        fail("NUV output noise requires a scalar output");
    }
}

NuvOverrides NuvOverrides::constant(const StateSpaceModel& model, double value)
{
    NuvOverrides o;
    const auto count = static_cast<Index>(model.nuv_inputs.size());
    o.input_var = Matrix::Constant(model.horizon, count, value);
    for (Index k = 0; k < std::min(model.nuv_first_step, model.horizon); ++k) {
        o.input_var.row(k).setZero();
    }
    if (model.nuv_output) {
        o.output_var = Vector::Constant(model.horizon, value);
    }
    return o;
}

Matrix input_cov_at(const StateSpaceModel& model, const NuvOverrides* overrides, Index k)
{
    Matrix cov = model.input_cov;
    for (std::size_t i = 0; i < model.nuv_inputs.size(); ++i) {
        const Index j = model.nuv_inputs[i];
        if (k < model.nuv_first_step) {
            cov(j, j) = 0.0;
        } else if (overrides != nullptr) {
            cov(j, j) = overrides->input_var(k, static_cast<Index>(i));
        }
    }
    return cov;
}

Matrix obs_noise_at(const StateSpaceModel& model, const NuvOverrides* overrides, Index k)
{
    Matrix r = model.obs_noise;
    if (model.nuv_output && overrides != nullptr) {
        r(0, 0) += overrides->output_var(k);
    }
    return r;
}

Matrix as_observations(const std::vector<double>& y)
{
    Matrix m(static_cast<Index>(y.size()), 1);
    for (std::size_t i = 0; i < y.size(); ++i) {
        m(static_cast<Index>(i), 0) = y[i];
    }
    return m;
}

SmoothingResult smooth(SmootherKind kind, const StateSpaceModel& model, const Matrix& y,
                       const NuvOverrides* overrides, const SmootherOptions& options)
{
    return kind == SmootherKind::Mbf ? mbf_smooth(model, y, overrides, options)
                                     : bifm_smooth(model, y, overrides, options);
}

// ---------------------------------------------------------------------------

namespace detail {

void check_inputs(const StateSpaceModel& model, const Matrix& y, const NuvOverrides* overrides)
{
    model.validate();
    if (y.rows() != model.horizon || y.cols() != model.output_dim()) {
        throw DimensionError("observations must be " + std::to_string(model.horizon) + "x" +
                             std::to_string(model.output_dim()) + ", got " + shape(y));
    }
    for (Index k = 0; k < y.rows(); ++k) {
        if (!y.row(k).allFinite()) {
            throw std::invalid_argument("non-finite observation at step " + std::to_string(k));
        }
    }
    const auto count = static_cast<Index>(model.nuv_inputs.size());
    if (overrides == nullptr) {
        if (model.nuv_output) {
            throw std::invalid_argument("NUV output noise requires overrides");
        }
        return;
    }
    if (overrides->input_var.rows() != model.horizon || overrides->input_var.cols() != count) {
        throw DimensionError("input_var overrides must be " + std::to_string(model.horizon) + "x" +
                             std::to_string(count));
    }
    if (!overrides->input_var.allFinite() || (overrides->input_var.array() < 0.0).any()) {
        throw std::invalid_argument("input_var overrides must be finite and non-negative");
    }
    if (model.nuv_output) {
        if (overrides->output_var.size() != model.horizon) {
            throw DimensionError("output_var overrides must have length " +
                                 std::to_string(model.horizon));
        }
        if (!overrides->output_var.allFinite() || (overrides->output_var.array() < 0.0).any()) {
            throw std::invalid_argument("output_var overrides must be finite and non-negative");
        }
    }
}

std::vector<InputPiece> input_pieces(const Matrix& b, const Matrix& cov)
{
    std::vector<InputPiece> pieces;
    if (linalg::is_diagonal(cov)) {
        for (Index j = 0; j < cov.rows(); ++j) {
            if (cov(j, j) > 0.0) {
                pieces.push_back({b.col(j), GaussianMoment(Vector::Zero(1),
                                                           Matrix::Constant(1, 1, cov(j, j)))});
            }
        }
    } else {
        pieces.push_back({b, GaussianMoment(Vector::Zero(cov.rows()), cov)});
    }
    return pieces;
}

std::vector<StepPlan> plan_steps(const StateSpaceModel& model, const NuvOverrides* overrides)
{
    std::vector<StepPlan> plans(static_cast<std::size_t>(model.horizon));
    for (Index k = 0; k < model.horizon; ++k) {
        StepPlan& p = plans[static_cast<std::size_t>(k)];
        p.input_cov = input_cov_at(model, overrides, k);
        p.inputs = input_pieces(model.B, p.input_cov);
        p.obs_noise = obs_noise_at(model, overrides, k);
        p.obs_diagonal = linalg::is_diagonal(p.obs_noise);
        p.outlier_var = model.nuv_output ? overrides->output_var(k) : 0.0;
    }
    return plans;
}

GaussianInfo absorb_input(const GaussianInfo& msg, const InputPiece& piece, Direction direction,
                          double& log_scale)
{
    const Matrix& s = piece.u.cov();
    const Vector bxi = piece.b.transpose() * msg.xi();
    const Matrix mm = piece.b.transpose() * msg.prec() * piece.b;
    if (s.rows() == 1) {
        const double a = mm(0, 0);
        const double h = s(0, 0) / (1.0 + s(0, 0) * a);
        log_scale += -0.5 * std::log1p(s(0, 0) * a) + 0.5 * h * bxi(0) * bxi(0);
    } else {
        const Matrix lhs = Matrix::Identity(s.rows(), s.rows()) + s * mm;
        const Matrix h = linalg::symmetrize(linalg::general_solve(lhs, s));
        log_scale += -0.5 * linalg::log_abs_det(lhs) + 0.5 * bxi.dot(h * bxi);
    }
    return input_block_forward_info(msg, piece.b, piece.u, direction);
}

GaussianInfo observation_noise_info(const StepPlan& plan, const Vector& y)
{
    const Index l = y.size();
    Matrix w;
    if (plan.obs_diagonal) {
        w = Matrix::Zero(l, l);
        for (Index i = 0; i < l; ++i) {
            w(i, i) = 1.0 / plan.obs_noise(i, i);
        }
    } else {
        w = linalg::spd_inverse(plan.obs_noise);
    }
    Vector xi = w * y;
    return GaussianInfo(std::move(xi), std::move(w));
}

GaussianInfo observation_info(const Matrix& c, const StepPlan& plan, const Vector& y,
                              double& log_scale)
{
    const GaussianInfo noise = observation_noise_info(plan, y);
    double log_det = 0.0;
    if (plan.obs_diagonal) {
        for (Index i = 0; i < y.size(); ++i) {
            log_det += std::log(plan.obs_noise(i, i));
        }
    } else {
        log_det = linalg::spd_log_det(plan.obs_noise);
    }
    log_scale += -0.5 * y.dot(noise.xi()) - 0.5 * (static_cast<double>(y.size()) * kLog2Pi + log_det);
    return matmul_backward(noise, c);
}

std::optional<std::pair<GaussianMoment, double>> normalize_info(const GaussianInfo& msg,
                                                                double log_scale,
                                                                double min_rcond)
{
    if (linalg::is_zero(msg.prec())) {
        return std::nullopt;
    }
    const auto f = linalg::try_spd_factor(msg.prec(), min_rcond);
    if (!f) {
        return std::nullopt;
    }
    Vector mean = f->inverse * msg.xi();
    const double n = static_cast<double>(msg.dim());
    const double ll = log_scale + 0.5 * msg.xi().dot(mean) + 0.5 * n * kLog2Pi - 0.5 * f->log_det;
    return std::make_pair(GaussianMoment(std::move(mean), f->inverse), ll);
}

SmoothingResult allocate_result(const StateSpaceModel& model)
{
    SmoothingResult r;
    const auto k = static_cast<std::size_t>(model.horizon);
    r.state.resize(k);
    r.state_dual.resize(k);
    r.input.resize(k);
    r.input_dual.resize(k);
    r.output.resize(k);
    if (model.nuv_output) {
        r.outlier.resize(k);
        r.outlier_dual.resize(k);
    }
    return r;
}

void fill_step(const StateSpaceModel& model, const StepPlan& plan, Index k, const Vector& y_k,
               const Marginal& state, const DualMarginal& state_dual,
               const DualMarginal& pre_obs_dual, SmoothingResult& out)
{
    const auto i = static_cast<std::size_t>(k);
    out.state[i] = state;
    out.state_dual[i] = state_dual;
    const DualMarginal u_dual = matmul_dual(pre_obs_dual, model.B);
    const Matrix& s = plan.input_cov;
    out.input[i] = Marginal(-s * u_dual.dxi, s - s * u_dual.dprec * s);
    out.input_dual[i] = u_dual;
    out.output[i] = matmul_marginal(state, model.C);
    if (model.nuv_output) {
        const double r = plan.obs_noise(0, 0);
        const double tau = plan.outlier_var;
        const Marginal& yk = out.output[i];
        const double dxi = (yk.mean(0) - y_k(0)) / r;
        const double dw = 1.0 / r - yk.cov(0, 0) / (r * r);
        out.outlier_dual[i] = DualMarginal(Vector::Constant(1, dxi), Matrix::Constant(1, 1, dw));
        out.outlier[i] =
            Marginal(Vector::Constant(1, -tau * dxi), Matrix::Constant(1, 1, tau - tau * tau * dw));
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dense oracle. Latent coordinates eta with prior precision 1 (standard
// normal) or 0 (flat initial state); every quantity is an affine map of eta.

namespace {

struct Affine {
    Matrix t;
    Vector c;
};

}  // namespace

SmoothingResult dense_joint_solve(const StateSpaceModel& model, const Matrix& y,
                                  const NuvOverrides* overrides)
{
    detail::check_inputs(model, y, overrides);
    const Index n = model.state_dim();
    const Index kk = model.horizon;
    const Index l = model.output_dim();
    if (n * kk > 2000) {
        throw std::invalid_argument("dense_joint_solve: state_dim * horizon exceeds 2000");
    }

    // Column blocks of eta.
    Matrix x0_root;
    Vector x0_mean = Vector::Zero(n);
    bool flat = false;
    switch (model.initial.kind) {
    case InitialKind::NonInformative:
        x0_root = Matrix::Identity(n, n);
        flat = true;
        break;
    case InitialKind::Deterministic:
        x0_root = Matrix::Zero(n, 0);
        x0_mean = model.initial.prior->mean();
        break;
    case InitialKind::Gaussian:
        x0_root = psd_sqrt(model.initial.prior->cov());
        x0_mean = model.initial.prior->mean();
        break;
    }
    std::vector<Matrix> u_roots;
    std::vector<Index> u_offset;
    std::vector<Index> z_offset;
    Index dim = x0_root.cols();
    for (Index k = 0; k < kk; ++k) {
        u_roots.push_back(psd_sqrt(input_cov_at(model, overrides, k)));
        u_offset.push_back(dim);
        dim += u_roots.back().cols();
        double tau = model.nuv_output ? overrides->output_var(k) : 0.0;
        z_offset.push_back(tau > 0.0 ? dim : -1);
        dim += tau > 0.0 ? 1 : 0;
    }
    const Index flat_cols = flat ? n : 0;
    Vector prior_prec = Vector::Ones(dim);
    prior_prec.head(flat_cols).setZero();

    std::vector<Affine> states;
    std::vector<Affine> inputs;
    std::vector<Affine> outliers;
    Affine x{Matrix::Zero(n, dim), x0_mean};
    x.t.leftCols(x0_root.cols()) = x0_root;
    const Affine initial = x;
    const Index big = kk * l;
    Matrix g = Matrix::Zero(big, dim);
    Vector g0 = Vector::Zero(big);
    for (Index k = 0; k < kk; ++k) {
        const Matrix& root = u_roots[static_cast<std::size_t>(k)];
        Affine u{Matrix::Zero(model.input_dim(), dim), Vector::Zero(model.input_dim())};
        u.t.middleCols(u_offset[static_cast<std::size_t>(k)], root.cols()) = root;
        x = Affine{model.A * x.t + model.B * u.t, model.A * x.c};
        Affine z{Matrix::Zero(1, dim), Vector::Zero(1)};
        if (z_offset[static_cast<std::size_t>(k)] >= 0) {
            z.t(0, z_offset[static_cast<std::size_t>(k)]) = std::sqrt(overrides->output_var(k));
        }
        g.middleRows(k * l, l) = model.C * x.t;
        g0.segment(k * l, l) = model.C * x.c;
        if (model.nuv_output) {
            g.row(k * l) += z.t.row(0);
        }
        states.push_back(x);
        inputs.push_back(u);
        outliers.push_back(z);
    }
    Vector yy(big);
    for (Index k = 0; k < kk; ++k) {
        yy.segment(k * l, l) = y.row(k).transpose();
    }
    Matrix rinv = Matrix::Zero(big, big);
    Matrix rblock = model.obs_noise;
    const Matrix rblock_inv = linalg::spd_inverse(rblock);
    for (Index k = 0; k < kk; ++k) {
        rinv.block(k * l, k * l, l, l) = rblock_inv;
    }

    Matrix post = g.transpose() * rinv * g;
    post.diagonal() += prior_prec;
    const Eigen::LLT<Matrix> llt(linalg::symmetrize(post));
    if (llt.info() != Eigen::Success) {
        throw SingularMatrixError("dense_joint_solve: posterior precision is singular");
    }
    const Matrix cov = llt.solve(Matrix::Identity(dim, dim));
    const Vector mean = cov * (g.transpose() * (rinv * (yy - g0)));

    auto eval = [&](const Affine& a) {
        return Marginal(a.t * mean + a.c, a.t * cov * a.t.transpose());
    };

    SmoothingResult out;
    for (Index k = 0; k < kk; ++k) {
        const auto i = static_cast<std::size_t>(k);
        out.state.push_back(eval(states[i]));
        out.input.push_back(eval(inputs[i]));
        out.output.push_back(matmul_marginal(out.state.back(), model.C));
        if (model.nuv_output) {
            out.outlier.push_back(eval(outliers[i]));
        }
    }
    out.initial = eval(initial);

    // Marginal likelihood: non-flat coordinates integrated in closed form
    // (covariance S), flat ones against Lebesgue measure.
    const Matrix gn = g.rightCols(dim - flat_cols);
    Matrix s = gn * gn.transpose();
    for (Index k = 0; k < kk; ++k) {
        s.block(k * l, k * l, l, l) += rblock;
    }
    const Eigen::LLT<Matrix> sl(linalg::symmetrize(s));
    const Vector r = yy - g0;
    const Vector sr = sl.solve(r);
    double ll = -0.5 * (static_cast<double>(big) * kLog2Pi +
                        2.0 * sl.matrixLLT().diagonal().array().log().sum() + r.dot(sr));
    if (flat) {
        const Matrix gf = g.leftCols(flat_cols);
        const Matrix m = gf.transpose() * sl.solve(gf);
        const Eigen::LLT<Matrix> ml(linalg::symmetrize(m));
        if (ml.info() != Eigen::Success) {
            throw SingularMatrixError("dense_joint_solve: initial state is not identifiable");
        }
        const Vector b = gf.transpose() * sr;
        ll += 0.5 * static_cast<double>(flat_cols) * kLog2Pi -
              ml.matrixLLT().diagonal().array().log().sum() + 0.5 * b.dot(ml.solve(b));
    }
    out.log_likelihood = ll;
    return out;
}

}  // namespace nuvssm
