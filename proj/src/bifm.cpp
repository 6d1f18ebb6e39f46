#include <algorithm>
#include <optional>

#include <Eigen/Cholesky>

#include "nuvssm/ssm.hpp"
#include "ssm_detail.hpp"

namespace nuvssm {
namespace {

using detail::InputPiece;
using detail::StepPlan;

struct BackwardStep {
    GaussianInfo post;  // on X_k, downstream of the observation
    // Backward messages around the input pieces: entry j on the edge in front
    // of piece j, the last entry in front of the observation.
    std::vector<GaussianInfo> chain;
};

// Propagates a marginal downstream through a sequence of input pieces.
Marginal through_inputs(Marginal m, const std::vector<InputPiece>& pieces,
                        const std::vector<GaussianInfo>& chain, BlockVariant variant)
{
    for (std::size_t j = 0; j < pieces.size(); ++j) {
        const InputBlockCache cache{chain[j], chain[j + 1]};
        m = input_block_marginal(m, pieces[j].b, pieces[j].u, cache, variant, Direction::Reverse);
    }
    return m;
}

std::vector<InputPiece> prior_pieces(const GaussianMoment& prior)
{
    const Index n = prior.dim();
    if (linalg::is_diagonal(prior.cov())) {
        return detail::input_pieces(Matrix::Identity(n, n), prior.cov());
    }
    instrumentation::record_factorization(n);
    const Eigen::LDLT<Matrix> ldlt(prior.cov());
    Matrix root = ldlt.transpositionsP().transpose() * Matrix(ldlt.matrixL());
    const Vector d = ldlt.vectorD().cwiseMax(0.0);
    return detail::input_pieces(root, d.asDiagonal().toDenseMatrix());
}

}  // namespace

SmoothingResult bifm_smooth(const StateSpaceModel& model, const Matrix& y,
                            const NuvOverrides* overrides, const SmootherOptions& options)
{
    detail::check_inputs(model, y, overrides);
    const std::vector<StepPlan> plans = detail::plan_steps(model, overrides);
    const Index n = model.state_dim();
    const Index kk = model.horizon;

    // Backward information filter.
    std::vector<BackwardStep> steps;
    steps.reserve(static_cast<std::size_t>(kk));
    GaussianInfo msg = GaussianInfo::non_informative(n);
    double log_scale = 0.0;
    for (Index k = kk - 1; k >= 0; --k) {
        const StepPlan& plan = plans[static_cast<std::size_t>(k)];
        const Vector yk = y.row(k).transpose();
        BackwardStep step{msg, {}};
        msg = equality_node(msg, detail::observation_info(model.C, plan, yk, log_scale));
        step.chain.assign(plan.inputs.size() + 1, msg);
        for (auto j = static_cast<Index>(plan.inputs.size()) - 1; j >= 0; --j) {
            msg = detail::absorb_input(msg, plan.inputs[static_cast<std::size_t>(j)],
                                       Direction::Reverse, log_scale);
            step.chain[static_cast<std::size_t>(j)] = msg;
        }
        msg = matmul_backward(msg, model.A);
        steps.push_back(std::move(step));
    }
    std::reverse(steps.begin(), steps.end());

    SmoothingResult out = detail::allocate_result(model);
    Marginal marg;
    switch (model.initial.kind) {
    case InitialKind::NonInformative: {
        auto normalized = detail::normalize_info(msg, log_scale);
        if (!normalized) {
            throw SingularMatrixError(
                "bifm_smooth: observations do not determine the non-informative initial state");
        }
        marg = Marginal(normalized->first.mean(), normalized->first.cov());
        out.log_likelihood = normalized->second;
        break;
    }
    case InitialKind::Deterministic:
    case InitialKind::Gaussian: {
        const GaussianMoment& prior = *model.initial.prior;
        const std::vector<InputPiece> pieces = prior_pieces(prior);
        std::vector<GaussianInfo> chain(pieces.size() + 1, msg);
        for (auto j = static_cast<Index>(pieces.size()) - 1; j >= 0; --j) {
            msg = detail::absorb_input(msg, pieces[static_cast<std::size_t>(j)], Direction::Reverse,
                                       log_scale);
            chain[static_cast<std::size_t>(j)] = msg;
        }
        const Vector& m0 = prior.mean();
        out.log_likelihood = log_scale - 0.5 * m0.dot(msg.prec() * m0) + msg.xi().dot(m0);
        marg = through_inputs(Marginal(m0, Matrix::Zero(n, n)), pieces, chain,
                              options.input_variant);
        break;
    }
    }
    out.initial = marg;

    // Forward sweep in marginals.
    for (Index k = 0; k < kk; ++k) {
        const StepPlan& plan = plans[static_cast<std::size_t>(k)];
        const BackwardStep& step = steps[static_cast<std::size_t>(k)];
        marg = matmul_marginal(marg, model.A);
        marg = through_inputs(marg, plan.inputs, step.chain, options.input_variant);
        const DualMarginal pre_dual = dual_from_backward(step.chain.back(), marg);
        const DualMarginal state_dual = dual_from_backward(step.post, marg);
        detail::fill_step(model, plan, k, y.row(k).transpose(), marg, state_dual, pre_dual, out);
    }
    return out;
}

}  // namespace nuvssm
