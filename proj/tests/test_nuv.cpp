#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "nuvssm/batch_linear.hpp"
#include "nuvssm/nuv_em.hpp"
#include "support.hpp"

using namespace nuvssm;

namespace {

StateSpaceModel embedded_scalar(double noise)
{
    StateSpaceModel m;
    m.A = Matrix::Identity(1, 1);
    m.B = Matrix::Identity(1, 1);
    m.C = Matrix::Identity(1, 1);
    m.obs_noise = Matrix::Constant(1, 1, noise);
    m.input_cov = Matrix::Zero(1, 1);
    m.horizon = 1;
    m.initial = InitialState::deterministic(Vector::Zero(1));
    m.nuv_inputs = {0};
    return m;
}

}  // namespace

TEST_CASE("update rules")
{
    CHECK(em_update(0, 0) == 0.0);
    CHECK(em_update(1, 0.5) == 1.5);
    CHECK_THROWS(em_update(1, -0.1));
    CHECK(*mackay_update(1, 0, 1) == 1.0);
    CHECK(*mackay_update(1, 0.5, 1) == 2.0);
    CHECK_FALSE(mackay_update(1, 1.0, 1.0).has_value());
    CHECK(ml_update(1, 2) == 0.0);
    CHECK(ml_update(2, 1) == 3.0);
    CHECK_THROWS(ml_update(1, 0.0));
    CHECK_THROWS(ml_update(NAN, 1.0));
}

TEST_CASE("scalar closed form through the state space model")
{
    for (double mu : {0.0, 0.5, 1.0, 2.0, 5.0}) {
        CAPTURE(mu);
        const NuvRun run = run_nuv(embedded_scalar(1.0), as_observations({mu}));
        const double s2 = std::max(0.0, mu * mu - 1.0);
        const double u = mu == 0.0 ? 0.0 : mu * s2 / (mu * mu);
        CHECK(run.state.converged);
        CHECK(std::abs(run.state.variances(0) - s2) < 1e-8);
        CHECK(std::abs(run.result.input[0].mean(0) - u) < 1e-8);
    }
}

TEST_CASE("EM alone approaches the closed form; MacKay is faster")
{
    NuvConfig em;
    em.update_rule = UpdateRule::Em;
    em.rel_tol = 1e-10;
    em.max_iters = 5000;
    NuvConfig mk = em;
    mk.update_rule = UpdateRule::MacKay;
    const Matrix y = as_observations({2.0});
    const NuvRun a = run_nuv(embedded_scalar(1.0), y, em);
    const NuvRun b = run_nuv(embedded_scalar(1.0), y, mk);
    CHECK(a.state.variances(0) == doctest::Approx(3.0).epsilon(1e-8));
    CHECK(b.state.variances(0) == doctest::Approx(3.0).epsilon(1e-8));
    CHECK(b.state.iteration < a.state.iteration);
    const auto& h = a.state.loglik_history;
    for (std::size_t i = 1; i < h.size(); ++i) {
        CHECK(h[i] >= h[i - 1] - 1e-10);
    }
}

TEST_CASE("zero signal leaves nothing active")
{
    StateSpaceModel m = embedded_scalar(0.01);
    m.horizon = 20;
    m.nuv_first_step = 1;
    const NuvRun run = run_nuv(m, Matrix::Zero(20, 1));
    CHECK(run.state.active_set.empty());
}

TEST_CASE("single jump of height 10")
{
    StateSpaceModel m = embedded_scalar(0.01);
    m.horizon = 100;
    m.initial = InitialState::non_informative();
    m.nuv_first_step = 1;
    testsupport::Rng rng(3);
    Matrix y(100, 1);
    for (Index k = 0; k < 100; ++k) {
        y(k, 0) = (k >= 50 ? 10.0 : 0.0) + 0.1 * rng.normal();
    }
    m.obs_noise(0, 0) = 0.25;
    const NuvRun run = run_nuv(m, y);
    REQUIRE(run.state.active_set.size() == 1);
    CHECK(run.state.active_set[0] == 50);
}

TEST_CASE("batch linear: W~ recursion and closed forms")
{
    testsupport::Rng rng(11);
    for (int t = 0; t < 50; ++t) {
        const Index n = rng.integer(1, 8);
        const Index kk = rng.integer(1, 64);
        DictionaryModel d{rng.normal(n, kk), rng.uniform(0.1, 2.0), rng.normal(n, 1)};
        Vector s(kk);
        for (Index k = 0; k < kk; ++k) {
            s(k) = rng.uniform(0, 1) < 0.3 ? 0.0 : rng.uniform(0.0, 3.0);
        }
        CHECK(linalg::rel_diff(wtilde_recursive(d, s), wtilde_direct(d, s)) < 1e-10);
        const Index k = rng.integer(0, kk - 1);
        const auto a = backward_message_moments(d, s, k);
        const auto b = backward_message_moments_wk(d, s, k);
        CHECK(a.mean == doctest::Approx(b.mean).epsilon(1e-9));
        CHECK(a.var == doctest::Approx(b.var).epsilon(1e-9));
    }
}

TEST_CASE("scalar dictionary")
{
    DictionaryModel d{Matrix::Ones(1, 1), 1.0, Vector::Constant(1, 2.0)};
    const Vector s = Vector::Constant(1, 3.0);
    CHECK(solve_map(d, s)(0) == doctest::Approx(1.5));
    const auto bm = backward_message_moments(d, Vector::Zero(1), 0);
    CHECK(bm.mean == doctest::Approx(2.0));
    CHECK(bm.var == doctest::Approx(1.0));
    const auto rep = check_stationarity(d, s, 1e-8);
    CHECK(rep.all_satisfied);
    CHECK(std::abs(rep.entries[0].wt_residual) < 1e-8);
}

TEST_CASE("dictionary NUV: monotone EM and stationary converged points")
{
    testsupport::Rng rng(99);
    for (int t = 0; t < 10; ++t) {
        const Index n = 5;
        const Index kk = 8;
        DictionaryModel d{rng.normal(n, kk), 0.3, Vector::Zero(n)};
        d.y = d.atoms.col(1) * 2.0 + d.atoms.col(4) * -1.5 + 0.5 * rng.normal(n, 1);
        NuvConfig em;
        em.update_rule = UpdateRule::Em;
        em.max_iters = 300;
        const NuvState e = run_nuv(d, em);
        for (std::size_t i = 1; i < e.loglik_history.size(); ++i) {
            CHECK(e.loglik_history[i] >= e.loglik_history[i - 1] - 1e-10);
        }
        NuvConfig ml;
        ml.rel_tol = 1e-12;
        const NuvState f = run_nuv(d, ml);
        CHECK(f.converged);
        const auto rep = check_stationarity(d, f.variances, 1e-6);
        CHECK(rep.all_satisfied);
    }
}
