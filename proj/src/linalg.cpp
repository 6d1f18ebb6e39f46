#include "nuvssm/linalg.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>

namespace nuvssm {

const Tolerances& tolerances()
{
    static const Tolerances defaults{};
    return defaults;
}

namespace instrumentation {
namespace {
thread_local FactorizationTally* active_tally = nullptr;
}

std::size_t FactorizationTally::count_above(Index dim) const
{
    std::size_t n = 0;
    for (const auto& [d, c] : by_dimension) {
        if (d > dim) {
            n += c;
        }
    }
    return n;
}

std::size_t FactorizationTally::total() const
{
    return count_above(0);
}

ScopedFactorizationTally::ScopedFactorizationTally() : previous_(active_tally)
{
    active_tally = &tally_;
}

ScopedFactorizationTally::~ScopedFactorizationTally()
{
    active_tally = previous_;
}

void record_factorization(Index dim)
{
    if (active_tally != nullptr) {
        ++active_tally->by_dimension[dim];
    }
}

}  // namespace instrumentation

namespace linalg {

Matrix symmetrize(const Matrix& m)
{
    return 0.5 * (m + m.transpose());
}

double asymmetry(const Matrix& m)
{
    const double scale = std::max(m.norm(), 1e-300);
    return (m - m.transpose()).norm() / scale;
}

bool is_psd(const Matrix& m, double tol)
{
    if (m.size() == 0) {
        return true;
    }
    Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(m), Eigen::EigenvaluesOnly);
    const auto& ev = eig.eigenvalues();
    const double largest = ev.cwiseAbs().maxCoeff();
    return ev.minCoeff() >= -tol * largest;
}

Matrix spd_solve(const Matrix& s, const Matrix& b)
{
    instrumentation::record_factorization(s.rows());
    if (s.rows() == 1) {
        const double d = s(0, 0);
        if (!(d > 0.0) || !std::isfinite(d)) {
            throw SingularMatrixError("scalar solve: non-positive pivot");
        }
        return b / d;
    }
    Eigen::LLT<Matrix> llt(symmetrize(s));
    if (llt.info() != Eigen::Success) {
        throw SingularMatrixError("Cholesky factorization failed: matrix not positive definite");
    }
    return llt.solve(b);
}

Matrix spd_inverse(const Matrix& s)
{
    return symmetrize(spd_solve(s, Matrix::Identity(s.rows(), s.cols())));
}

double spd_log_det(const Matrix& s)
{
    instrumentation::record_factorization(s.rows());
    if (s.rows() == 1) {
        if (!(s(0, 0) > 0.0)) {
            throw SingularMatrixError("log det of non-positive scalar");
        }
        return std::log(s(0, 0));
    }
    Eigen::LLT<Matrix> llt(symmetrize(s));
    if (llt.info() != Eigen::Success) {
        throw SingularMatrixError("log det: matrix not positive definite");
    }
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

std::optional<SpdFactor> try_spd_factor(const Matrix& s, double min_rcond)
{
    instrumentation::record_factorization(s.rows());
    if (s.rows() == 1) {
        const double d = s(0, 0);
        if (!(d > 0.0) || !std::isfinite(d)) {
            return std::nullopt;
        }
        return SpdFactor{Matrix::Constant(1, 1, 1.0 / d), std::log(d)};
    }
    Eigen::LLT<Matrix> llt(symmetrize(s));
    if (llt.info() != Eigen::Success || !(llt.rcond() > min_rcond)) {
        return std::nullopt;
    }
    SpdFactor f;
    f.inverse = symmetrize(llt.solve(Matrix::Identity(s.rows(), s.cols())));
    f.log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    return f;
}

Matrix general_solve(const Matrix& m, const Matrix& b)
{
    instrumentation::record_factorization(m.rows());
    if (m.rows() == 1) {
        const double d = m(0, 0);
        if (d == 0.0 || !std::isfinite(d)) {
            throw SingularMatrixError("scalar solve: zero pivot");
        }
        return b / d;
    }
    Eigen::FullPivLU<Matrix> lu(m);
    if (!lu.isInvertible()) {
        throw SingularMatrixError("LU factorization: matrix is singular");
    }
    return lu.solve(b);
}

Matrix general_inverse(const Matrix& m)
{
    return general_solve(m, Matrix::Identity(m.rows(), m.cols()));
}

double log_abs_det(const Matrix& m)
{
    instrumentation::record_factorization(m.rows());
    if (m.rows() == 1) {
        if (m(0, 0) == 0.0) {
            throw SingularMatrixError("log det: zero scalar");
        }
        return std::log(std::abs(m(0, 0)));
    }
    Eigen::PartialPivLU<Matrix> lu(m);
    const Vector d = lu.matrixLU().diagonal();
    if ((d.array() == 0.0).any()) {
        throw SingularMatrixError("log det: matrix is singular");
    }
    return d.array().abs().log().sum();
}

bool is_zero(const Matrix& m)
{
    return (m.array() == 0.0).all();
}

bool is_diagonal(const Matrix& m)
{
    for (Index j = 0; j < m.cols(); ++j) {
        for (Index i = 0; i < m.rows(); ++i) {
            if (i != j && m(i, j) != 0.0) {
                return false;
            }
        }
    }
    return true;
}

bool all_finite(const Matrix& m)
{
    return m.allFinite();
}

double rel_diff(const Matrix& a, const Matrix& b, double floor)
{
    const double scale = std::max({a.norm(), b.norm(), floor});
    return (a - b).norm() / scale;
}

}  // namespace linalg
}  // namespace nuvssm
