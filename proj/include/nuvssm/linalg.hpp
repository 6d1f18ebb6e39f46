#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace nuvssm {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Raised when a matrix that must be inverted or factorized is singular
/// (or not positive definite where that is required).
class SingularMatrixError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Library-level numeric tolerances.
struct Tolerances {
    double identity = 1e-10;  // identity checks between algebraic routes
    double symmetry = 1e-12;  // relative Frobenius asymmetry accepted on input
    double psd = 1e-10;       // negative eigenvalue slack, relative to the largest
};

const Tolerances& tolerances();

namespace instrumentation {

/// Counts matrix factorizations by dimension on the current thread while a
/// ScopedFactorizationTally is alive. Scalar divisions are recorded as
/// dimension 1.
struct FactorizationTally {
    std::map<Index, std::size_t> by_dimension;

    std::size_t count_above(Index dim) const;
    std::size_t total() const;
};

class ScopedFactorizationTally {
public:
    ScopedFactorizationTally();
    ~ScopedFactorizationTally();
    ScopedFactorizationTally(const ScopedFactorizationTally&) = delete;
    ScopedFactorizationTally& operator=(const ScopedFactorizationTally&) = delete;

    const FactorizationTally& tally() const { return tally_; }

private:
    FactorizationTally tally_;
    FactorizationTally* previous_;
};

void record_factorization(Index dim);

}  // namespace instrumentation

namespace linalg {

/// (M + M^T) / 2
Matrix symmetrize(const Matrix& m);

/// Relative Frobenius asymmetry ||M - M^T|| / max(||M||, tiny).
double asymmetry(const Matrix& m);

/// True if the smallest eigenvalue is >= -tol * (largest absolute eigenvalue).
bool is_psd(const Matrix& m, double tol = tolerances().psd);

/// Solve S X = B for symmetric positive definite S. 1x1 systems use a scalar
/// division; larger ones a Cholesky factorization.
Matrix spd_solve(const Matrix& s, const Matrix& b);

/// Inverse of a symmetric positive definite matrix (symmetrized).
Matrix spd_inverse(const Matrix& s);

/// log det of a symmetric positive definite matrix.
double spd_log_det(const Matrix& s);

struct SpdFactor {
    Matrix inverse;
    double log_det = 0.0;
};

/// Inverse and log det when S is positive definite with reciprocal condition
/// estimate above `min_rcond`; nullopt otherwise.
std::optional<SpdFactor> try_spd_factor(const Matrix& s, double min_rcond = 1e-12);

/// Solve M X = B for a general square matrix by partial-pivot LU.
Matrix general_solve(const Matrix& m, const Matrix& b);

/// Inverse of a general square matrix.
Matrix general_inverse(const Matrix& m);

/// log |det M| of a nonsingular square matrix.
double log_abs_det(const Matrix& m);

bool is_zero(const Matrix& m);
bool is_diagonal(const Matrix& m);
bool all_finite(const Matrix& m);

/// Relative error ||a - b|| / max(||a||, ||b||, floor).
double rel_diff(const Matrix& a, const Matrix& b, double floor = 1e-300);

}  // namespace linalg
}  // namespace nuvssm
