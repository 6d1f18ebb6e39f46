#include <cmath>
#include <optional>

#include "nuvssm/ssm.hpp"
#include "ssm_detail.hpp"

namespace nuvssm {
namespace {

using detail::StepPlan;

constexpr double kLog2Pi = 1.8378770664093454836;

struct ForwardStep {
    // Moment-form messages around the observation: [before, after each
    // scalar component ...] or [before, after] for a joint update.
    std::vector<GaussianMoment> obs_chain;
    // Information-form prefix (non-informative start): message after A, then
    // after each input piece; the last entry is in front of the observation.
    std::vector<GaussianInfo> info_chain;
    std::optional<GaussianInfo> post_info;
    std::optional<GaussianMoment> post;  // filtered message on X_k
};

// Moment-form measurement update with log-likelihood of the innovation.
void moment_observation(const Matrix& c, const StepPlan& plan, const Vector& y,
                        ForwardStep& step, double& loglik)
{
    GaussianMoment x = step.obs_chain.back();
    if (plan.obs_diagonal) {
        for (Index i = 0; i < c.rows(); ++i) {
            const Matrix ci = c.row(i);
            const double r = plan.obs_noise(i, i);
            const double s = (ci * x.cov() * ci.transpose())(0, 0) + r;
            const double e = y(i) - ci.row(0).dot(x.mean());
            loglik += -0.5 * (kLog2Pi + std::log(s) + e * e / s);
            x = observation_block_forward(
                x, ci, GaussianMoment(Vector::Constant(1, y(i)), Matrix::Constant(1, 1, r)));
            step.obs_chain.push_back(x);
        }
    } else {
        const Matrix s = c * x.cov() * c.transpose() + plan.obs_noise;
        const Vector e = y - c * x.mean();
        loglik += -0.5 * (static_cast<double>(y.size()) * kLog2Pi + linalg::spd_log_det(s) +
                          e.dot(linalg::spd_solve(s, e).col(0)));
        x = observation_block_forward(x, c, GaussianMoment(y, plan.obs_noise));
        step.obs_chain.push_back(x);
    }
    step.post = x;
}

DualMarginal moment_dual_backward(const DualMarginal& z_dual, const Matrix& c,
                                  const StepPlan& plan, const Vector& y,
                                  const ForwardStep& step, BlockVariant variant)
{
    DualMarginal d = z_dual;
    if (plan.obs_diagonal) {
        for (Index i = c.rows() - 1; i >= 0; --i) {
            const ObservationCache cache{step.obs_chain[static_cast<std::size_t>(i)],
                                         step.obs_chain[static_cast<std::size_t>(i) + 1]};
            d = observation_block_dual_backward(
                d, c.row(i),
                GaussianMoment(Vector::Constant(1, y(i)), Matrix::Constant(1, 1, plan.obs_noise(i, i))),
                cache, variant);
        }
        return d;
    }
    const ObservationCache cache{step.obs_chain[0], step.obs_chain[1]};
    return observation_block_dual_backward(d, c, GaussianMoment(y, plan.obs_noise), cache, variant);
}

}  // namespace

SmoothingResult mbf_smooth(const StateSpaceModel& model, const Matrix& y,
                           const NuvOverrides* overrides, const SmootherOptions& options)
{
    detail::check_inputs(model, y, overrides);
    const std::vector<StepPlan> plans = detail::plan_steps(model, overrides);
    const Index n = model.state_dim();
    const Index kk = model.horizon;
    const Matrix& a = model.A;
    const Matrix& c = model.C;

    std::vector<ForwardStep> steps(static_cast<std::size_t>(kk));
    double loglik = 0.0;

    // Forward sweep.
    std::optional<GaussianMoment> x;
    std::optional<GaussianInfo> xi_msg;
    double log_scale = 0.0;
    Matrix a_inv;
    double log_det_a = 0.0;
    if (model.initial.kind == InitialKind::NonInformative) {
        a_inv = linalg::general_inverse(a);
        log_det_a = linalg::log_abs_det(a);
        xi_msg = GaussianInfo::non_informative(n);
    } else {
        x = *model.initial.prior;
    }

    for (Index k = 0; k < kk; ++k) {
        const StepPlan& plan = plans[static_cast<std::size_t>(k)];
        ForwardStep& step = steps[static_cast<std::size_t>(k)];
        const Vector yk = y.row(k).transpose();
        if (x) {
            GaussianMoment pred = matmul_node(*x, a);
            const Matrix q = model.B * plan.input_cov * model.B.transpose();
            if (!linalg::is_zero(q)) {
                pred = adder_node_forward(pred, GaussianMoment(Vector::Zero(n), q));
            }
            step.obs_chain.push_back(pred);
            moment_observation(c, plan, yk, step, loglik);
            x = step.post;
            continue;
        }
        GaussianInfo msg(a_inv.transpose() * xi_msg->xi(),
                         a_inv.transpose() * xi_msg->prec() * a_inv);
        log_scale -= log_det_a;
        step.info_chain.push_back(msg);
        for (const auto& piece : plan.inputs) {
            msg = detail::absorb_input(msg, piece, Direction::Forward, log_scale);
            step.info_chain.push_back(msg);
        }
        msg = equality_node(msg, detail::observation_info(c, plan, yk, log_scale));
        step.post_info = msg;
        // Leave the information form only once W is comfortably invertible.
        const double min_rcond = k + 1 < kk ? 1e-6 : 1e-14;
        if (auto normalized = detail::normalize_info(msg, log_scale, min_rcond)) {
            step.post = normalized->first;
            loglik = normalized->second;
            x = step.post;
            xi_msg.reset();
        } else {
            xi_msg = msg;
        }
    }
    if (!x) {
        throw SingularMatrixError(
            "mbf_smooth: observations do not determine the non-informative initial state");
    }

    // Backward sweep in dual marginals.
    SmoothingResult out = detail::allocate_result(model);
    out.log_likelihood = loglik;
    DualMarginal z_dual = DualMarginal::zero(n);
    std::optional<Marginal> known;  // marginal on X_k in the information prefix
    for (Index k = kk - 1; k >= 0; --k) {
        const StepPlan& plan = plans[static_cast<std::size_t>(k)];
        const ForwardStep& step = steps[static_cast<std::size_t>(k)];
        const Vector yk = y.row(k).transpose();
        Marginal marg;
        DualMarginal state_dual;
        DualMarginal pre_dual;
        if (step.post) {
            state_dual = z_dual;
            marg = marginal_from_dual(*step.post, z_dual);
            if (!step.obs_chain.empty()) {
                pre_dual = moment_dual_backward(z_dual, c, plan, yk, step,
                                                options.observation_variant);
            } else {
                // First moment-form step after the information prefix.
                const ObservationCache cache{std::nullopt, *step.post};
                pre_dual = observation_block_dual_backward(
                    z_dual, c, detail::observation_noise_info(plan, yk), cache);
            }
        } else {
            marg = *known;
            state_dual = dual_from_forward(*step.post_info, marg);
            pre_dual = dual_from_forward(step.info_chain.back(), marg);
        }
        detail::fill_step(model, plan, k, yk, marg, state_dual, pre_dual, out);
        z_dual = matmul_dual(pre_dual, a);

        if (!step.info_chain.empty()) {
            // Marginal on X_{k-1} from the cached forward information messages.
            Marginal m = marg;
            for (auto j = static_cast<Index>(plan.inputs.size()) - 1; j >= 0; --j) {
                const auto& piece = plan.inputs[static_cast<std::size_t>(j)];
                const InputBlockCache cache{step.info_chain[static_cast<std::size_t>(j) + 1],
                                            step.info_chain[static_cast<std::size_t>(j)]};
                m = input_block_marginal(m, piece.b, piece.u, cache, options.input_variant,
                                         Direction::Forward);
            }
            known = matmul_marginal(m, a_inv);
        }
    }
    if (model.initial.kind == InitialKind::NonInformative) {
        out.initial = *known;
    } else {
        out.initial = marginal_from_dual(*model.initial.prior, z_dual);
    }
    return out;
}

}  // namespace nuvssm
