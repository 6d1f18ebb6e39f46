#pragma once

#include <optional>
#include <vector>

#include "nuvssm/gaussian.hpp"

namespace nuvssm {

enum class InitialKind { NonInformative, Deterministic, Gaussian };

/// Message entering the graph at X_0.
struct InitialState {
    InitialKind kind = InitialKind::NonInformative;
    std::optional<GaussianMoment> prior;

    static InitialState non_informative() { return {}; }
    static InitialState deterministic(Vector mean);
    static InitialState gaussian(GaussianMoment prior);
};

/// X_k = A X_{k-1} + B U_k,  Y_k = C X_k + Z_k,  k = 0 .. horizon-1
/// (0-based steps; X_{-1} is the initial edge).
///
/// Columns of B listed in `nuv_inputs` carry a per-step variance supplied
/// through NuvOverrides; they must be uncorrelated with the other inputs in
/// `input_cov`. With `nuv_output` set, each observation gets an additional
/// per-step noise term (scalar outputs only).
struct StateSpaceModel {
    Matrix A;
    Matrix B;
    Matrix C;
    Matrix obs_noise;  // L x L, positive definite
    Matrix input_cov;  // m x m, positive semidefinite
    Index horizon = 0;
    InitialState initial;

    std::vector<Index> nuv_inputs;
    Index nuv_first_step = 0;  // NUV inputs at earlier steps are held at zero
    bool nuv_output = false;

    Index state_dim() const { return A.rows(); }
    Index input_dim() const { return B.cols(); }
    Index output_dim() const { return C.rows(); }

    /// Throws std::invalid_argument describing the first violated constraint.
    void validate() const;
};

/// Per-step NUV variances.
struct NuvOverrides {
    Matrix input_var;   // horizon x nuv_inputs.size()
    Vector output_var;  // horizon, when nuv_output is set

    /// All NUV variances set to `value` (input NUVs before nuv_first_step to 0).
    static NuvOverrides constant(const StateSpaceModel& model, double value);
};

/// Input covariance at step k after applying overrides.
Matrix input_cov_at(const StateSpaceModel& model, const NuvOverrides* overrides, Index k);
/// Observation noise covariance at step k after applying overrides.
Matrix obs_noise_at(const StateSpaceModel& model, const NuvOverrides* overrides, Index k);

struct SmoothingResult {
    std::vector<Marginal> state;           // X_k
    std::vector<DualMarginal> state_dual;  // on X_k, downstream of the observation
    std::vector<Marginal> input;           // U_k
    std::vector<DualMarginal> input_dual;  // on U_k
    std::vector<Marginal> output;          // C X_k
    std::vector<Marginal> outlier;         // per-step NUV output term, if any
    std::vector<DualMarginal> outlier_dual;
    Marginal initial;                      // X_{-1}
    double log_likelihood = 0.0;

    Index horizon() const { return static_cast<Index>(state.size()); }
};

enum class SmootherKind { Mbf, Bifm };

struct SmootherOptions {
    BlockVariant observation_variant = BlockVariant::OutputSide;  // MBF dual update
    BlockVariant input_variant = BlockVariant::OutputSide;        // marginal update
};

/// Observations are the rows of `y` (horizon x L).
///
/// Forward Kalman filter in moment form, backward recursion in dual
/// marginals. A non-informative initial state is carried in information form
/// until the filtered precision becomes nonsingular; this prefix needs an
/// invertible A.
SmoothingResult mbf_smooth(const StateSpaceModel& model, const Matrix& y,
                           const NuvOverrides* overrides = nullptr,
                           const SmootherOptions& options = {});

/// Backward information filter, forward recursion in marginals.
SmoothingResult bifm_smooth(const StateSpaceModel& model, const Matrix& y,
                            const NuvOverrides* overrides = nullptr,
                            const SmootherOptions& options = {});

SmoothingResult smooth(SmootherKind kind, const StateSpaceModel& model, const Matrix& y,
                       const NuvOverrides* overrides = nullptr,
                       const SmootherOptions& options = {});

/// Exact posterior by assembling the joint Gaussian over the initial state,
/// all inputs and outlier terms, and conditioning on y with dense solves.
/// Dual marginals are not produced. Guarded by state_dim * horizon <= 2000.
SmoothingResult dense_joint_solve(const StateSpaceModel& model, const Matrix& y,
                                  const NuvOverrides* overrides = nullptr);

/// Column view of a scalar observation sequence.
Matrix as_observations(const std::vector<double>& y);

}  // namespace nuvssm
