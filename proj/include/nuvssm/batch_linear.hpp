#pragma once

#include <vector>

#include "nuvssm/linalg.hpp"
#include "nuvssm/nuv_em.hpp"

/// Y = sum_k b_k U_k + Z with U_k ~ N(0, sigma_k^2) and Z ~ N(0, noise_var I).
namespace nuvssm {

struct DictionaryModel {
    Matrix atoms;  // n x K, column k is b_k
    double noise_var = 1.0;
    Vector y;

    Index dim() const { return atoms.rows(); }
    Index count() const { return atoms.cols(); }
    /// Throws std::invalid_argument on zero atoms, shape mismatch or noise_var <= 0.
    void validate() const;
};

struct ScalarMoments {
    double mean = 0.0;
    double var = 0.0;
};

/// (sum_k s_k b_k b_k^T + noise_var I)^-1 by rank-one downdates, scalar
/// divisions only. `log_det_cov`, when given, receives log det of the inverse's
/// argument.
Matrix wtilde_recursive(const DictionaryModel& model, const Vector& sigmas,
                        double* log_det_cov = nullptr);

/// Same matrix through a Cholesky factorization.
Matrix wtilde_direct(const DictionaryModel& model, const Vector& sigmas);

/// (sum_{l != k} s_l b_l b_l^T + noise_var I)^-1 through a Cholesky factorization.
Matrix wk_direct(const DictionaryModel& model, const Vector& sigmas, Index k);

/// u_k = s_k b_k^T W~ y.
Vector solve_map(const DictionaryModel& model, const Vector& sigmas);

/// |y - sum_{k active} b_k u_k|^2 / noise_var + sum_{k active} u_k^2 / s_k.
double map_objective(const DictionaryModel& model, const Vector& sigmas, const Vector& u);

ScalarMoments posterior_moments(const DictionaryModel& model, const Vector& sigmas, Index k);

/// Mean and variance of the likelihood of U_k, from W~ (production path).
ScalarMoments backward_message_moments(const DictionaryModel& model, const Vector& sigmas, Index k);
/// Same from W_k.
ScalarMoments backward_message_moments_wk(const DictionaryModel& model, const Vector& sigmas,
                                          Index k);

/// log p(y | sigmas).
double log_likelihood(const DictionaryModel& model, const Vector& sigmas);

struct StationarityEntry {
    double variance = 0.0;
    double condition = 0.0;      // (b^T W_k y)^2 - b^T W_k b
    double wk_quadratic = 0.0;   // b^T W_k b
    double wt_lhs = 0.0;         // (b^T W~ y)^2
    double wt_rhs = 0.0;         // b^T W~ b
    double wt_residual = 0.0;    // (lhs - rhs) / rhs
    bool satisfied = false;
};

struct StationarityReport {
    std::vector<StationarityEntry> entries;
    bool all_satisfied = true;
    double max_active_residual = 0.0;
};

/// Active indices need |wt_residual| <= tol; inactive ones need
/// condition <= tol * wk_quadratic and wt_residual <= tol.
StationarityReport check_stationarity(const DictionaryModel& model, const Vector& sigmas,
                                      double tol = 1e-6);

/// Posterior and backward-message moments of every U_k plus the likelihood.
NuvStatistics dictionary_statistics(const DictionaryModel& model, const Vector& sigmas);

NuvState run_nuv(const DictionaryModel& model, const NuvConfig& config = {},
                 std::vector<IterationRecord>* trace = nullptr);

}  // namespace nuvssm
