#pragma once

#include <optional>
#include <stdexcept>

#include "nuvssm/linalg.hpp"

/// Gaussian message algebra for cycle-free linear Gaussian factor graphs.
///
/// Messages come in two parameterizations: moment form (mean, covariance) and
/// information form (precision-weighted mean xi = W m, precision W).
/// Non-informative messages exist only in information form (W = 0);
/// deterministic messages exist only in moment form (V = 0).
namespace nuvssm {

class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class GaussianInfo;

class GaussianMoment {
public:
    GaussianMoment(Vector mean, Matrix cov);

    static GaussianMoment deterministic(Vector mean);
    static GaussianMoment standard(Index dim);

    const Vector& mean() const { return mean_; }
    const Matrix& cov() const { return cov_; }
    Index dim() const { return mean_.size(); }

    /// Throws SingularMatrixError when cov is singular.
    GaussianInfo to_info() const;

private:
    Vector mean_;
    Matrix cov_;
};

class GaussianInfo {
public:
    GaussianInfo(Vector xi, Matrix prec);

    static GaussianInfo non_informative(Index dim);

    const Vector& xi() const { return xi_; }
    const Matrix& prec() const { return prec_; }
    Index dim() const { return xi_.size(); }
    bool is_non_informative() const;

    /// Throws SingularMatrixError when prec is singular.
    GaussianMoment to_moment() const;

private:
    Vector xi_;
    Matrix prec_;
};

/// Posterior marginal (m, V) of one edge.
struct Marginal {
    Vector mean;
    Matrix cov;

    Marginal() = default;
    Marginal(Vector m, Matrix v);
};

/// Dual marginal: dprec = (V_fwd + V_bwd)^-1, dxi = dprec (m_fwd - m_bwd).
struct DualMarginal {
    Vector dxi;
    Matrix dprec;

    DualMarginal() = default;
    DualMarginal(Vector xi, Matrix w);

    static DualMarginal zero(Index dim);
};

struct EdgeMarginal {
    Marginal marginal;
    DualMarginal dual;
};

// ---------------------------------------------------------------------------
// Equality constraint X = Y = Z

/// Forward (or backward) information message out of an equality node.
GaussianInfo equality_node(const GaussianInfo& a, const GaussianInfo& b);

/// Dual mean on X from the dual means on Y and Z.
Vector equality_dual_mean(const Vector& dxi_y, const Vector& dxi_z);

// ---------------------------------------------------------------------------
// Adder Z = X + Y

GaussianMoment adder_node_forward(const GaussianMoment& x, const GaussianMoment& y);

/// Backward message on X given the backward message on Z and the forward
/// message on Y.
GaussianMoment adder_node_backward(const GaussianMoment& z_bwd, const GaussianMoment& y_fwd);

// The dual marginal passes through an adder unchanged on all three edges.

// ---------------------------------------------------------------------------
// Matrix multiplier Y = A X (A may be rectangular)

GaussianMoment matmul_node(const GaussianMoment& x_fwd, const Matrix& a);
GaussianInfo matmul_backward(const GaussianInfo& y_bwd, const Matrix& a);
DualMarginal matmul_dual(const DualMarginal& y_dual, const Matrix& a);
Marginal matmul_marginal(const Marginal& x, const Matrix& a);

// ---------------------------------------------------------------------------
// Single-edge marginals and duals

/// Marginal and dual from a forward message and a backward message.
EdgeMarginal edge_marginal(const GaussianMoment& fwd, const GaussianMoment& bwd);
EdgeMarginal edge_marginal(const GaussianMoment& fwd, const GaussianInfo& bwd);
/// Requires W_fwd + W_bwd to be positive definite.
EdgeMarginal edge_marginal(const GaussianInfo& fwd, const GaussianInfo& bwd);

/// m = m_fwd - V_fwd dxi, V = V_fwd - V_fwd W~ V_fwd.
Marginal marginal_from_dual(const GaussianMoment& fwd, const DualMarginal& dual);

/// dxi = W m - xi, W~ = W - W V W for an information message on the edge
/// (either direction; the sign convention follows the backward message).
DualMarginal dual_from_backward(const GaussianInfo& bwd, const Marginal& marginal);
/// dxi = xi - W m, W~ = W - W V W for a forward information message.
DualMarginal dual_from_forward(const GaussianInfo& fwd, const Marginal& marginal);

// ---------------------------------------------------------------------------
// Observation block: X -> (=) -> Z with branch Y = A X.

/// Which edge's cached forward quantities drive a block update: the block's
/// output edge Z, or its input edge X.
enum class BlockVariant { OutputSide, InputSide };

/// Kalman measurement update in moment form. For a single-row A the gain is
/// obtained by scalar division.
GaussianMoment observation_block_forward(const GaussianMoment& x_fwd, const Matrix& a,
                                         const GaussianMoment& y_bwd);
/// Same with the observation in information form; W_y = 0 leaves x unchanged.
GaussianMoment observation_block_forward(const GaussianMoment& x_fwd, const Matrix& a,
                                         const GaussianInfo& y_bwd);

/// Forward quantities cached from the forward sweep.
struct ObservationCache {
    std::optional<GaussianMoment> x_fwd;  // before the update
    std::optional<GaussianMoment> z_fwd;  // after the update
};

/// Dual marginal on X from the dual marginal on Z.
/// OutputSide uses F = I - V_Z A^T W_Y A; InputSide uses
/// F = I - V_X A^T G A with G = (V_Y + A V_X A^T)^-1.
DualMarginal observation_block_dual_backward(const DualMarginal& z_dual, const Matrix& a,
                                             const GaussianMoment& y_bwd,
                                             const ObservationCache& cache,
                                             BlockVariant variant = BlockVariant::OutputSide);
/// Information-form observation; only the OutputSide variant applies.
DualMarginal observation_block_dual_backward(const DualMarginal& z_dual, const Matrix& a,
                                             const GaussianInfo& y_bwd,
                                             const ObservationCache& cache);

// ---------------------------------------------------------------------------
// Input block: Z = X + A Y.

/// Forward means the block as drawn (messages flowing X -> Z). Reverse is the
/// time-reversed use: the caller passes backward messages and the input mean
/// enters with opposite sign.
enum class Direction { Forward, Reverse };

/// Information-form update absorbing an additive input,
/// H = (W_Y + A^T W_X A)^-1.
GaussianInfo input_block_forward_info(const GaussianInfo& x, const Matrix& a,
                                      const GaussianInfo& u,
                                      Direction direction = Direction::Forward);
/// Same with the input in moment form; H = V_Y (I + A^T W_X A V_Y)^-1 so that
/// zero-variance inputs are admissible.
GaussianInfo input_block_forward_info(const GaussianInfo& x, const Matrix& a,
                                      const GaussianMoment& u,
                                      Direction direction = Direction::Forward);

/// Messages around an input block, for marginal propagation. `outgoing` is the
/// message on the edge whose marginal is known, flowing away from the block;
/// `incoming` is the message on the other edge, flowing into the block.
struct InputBlockCache {
    std::optional<GaussianInfo> outgoing;
    std::optional<GaussianInfo> incoming;
};

/// Propagates a marginal across an input block, from the edge where it is
/// known to the other edge. OutputSide uses F~ = I - W_out A V_Y A^T; InputSide
/// uses F~ = I - W_in A H A^T.
Marginal input_block_marginal(const Marginal& known, const Matrix& a, const GaussianMoment& u,
                              const InputBlockCache& cache,
                              BlockVariant variant = BlockVariant::OutputSide,
                              Direction direction = Direction::Forward);

}  // namespace nuvssm
