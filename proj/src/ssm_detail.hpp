#pragma once

#include <vector>

#include "nuvssm/ssm.hpp"

namespace nuvssm::detail {

/// One additive input b u with u ~ N(0, cov), absorbed as an input block.
struct InputPiece {
    Matrix b;
    GaussianMoment u;
};

struct StepPlan {
    Matrix input_cov;
    std::vector<InputPiece> inputs;
    Matrix obs_noise;  // includes the outlier variance
    bool obs_diagonal = true;
    double outlier_var = 0.0;
};

void check_inputs(const StateSpaceModel& model, const Matrix& y, const NuvOverrides* overrides);

std::vector<StepPlan> plan_steps(const StateSpaceModel& model, const NuvOverrides* overrides);

/// Decomposition of a covariance into scalar pieces when diagonal, one joint
/// piece otherwise. Zero-variance directions are dropped.
std::vector<InputPiece> input_pieces(const Matrix& b, const Matrix& cov);

/// Absorbs an input piece into an information message written as
/// exp(scale - x'Wx/2 + xi'x); returns the new message and adds the constant
/// that falls out of the integral to `log_scale`.
GaussianInfo absorb_input(const GaussianInfo& msg, const InputPiece& piece, Direction direction,
                          double& log_scale);

/// Observation likelihood as an information message on X, with its constant.
GaussianInfo observation_info(const Matrix& c, const StepPlan& plan, const Vector& y,
                              double& log_scale);

/// R^-1 as information message on the output edge (diagonal by division).
GaussianInfo observation_noise_info(const StepPlan& plan, const Vector& y);

/// Moment form and log of the integral of exp(scale - x'Wx/2 + xi'x) over x;
/// nullopt when W is not positive definite with rcond above `min_rcond`.
std::optional<std::pair<GaussianMoment, double>> normalize_info(const GaussianInfo& msg,
                                                                double log_scale,
                                                                double min_rcond = 1e-14);

SmoothingResult allocate_result(const StateSpaceModel& model);

/// Input, output and outlier posteriors of step k from the state marginal and
/// the dual marginal in front of the observation.
void fill_step(const StateSpaceModel& model, const StepPlan& plan, Index k, const Vector& y_k,
               const Marginal& state, const DualMarginal& state_dual,
               const DualMarginal& pre_obs_dual, SmoothingResult& out);

}  // namespace nuvssm::detail
