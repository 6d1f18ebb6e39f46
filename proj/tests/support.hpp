#pragma once

#include <algorithm>
#include <random>
#include <vector>

#include <Eigen/QR>

#include "nuvssm/ssm.hpp"

namespace testsupport {

using nuvssm::Index;
using nuvssm::Matrix;
using nuvssm::Vector;

struct Rng {
    std::mt19937_64 gen;
    explicit Rng(std::uint64_t seed) : gen(seed) {}

    double normal() { return std::normal_distribution<double>(0.0, 1.0)(gen); }
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen); }
    Index integer(Index lo, Index hi) { return std::uniform_int_distribution<Index>(lo, hi)(gen); }

    Matrix normal(Index r, Index c)
    {
        Matrix m(r, c);
        for (Index j = 0; j < c; ++j) {
            for (Index i = 0; i < r; ++i) {
                m(i, j) = normal();
            }
        }
        return m;
    }

    Matrix orthogonal(Index n)
    {
        Eigen::HouseholderQR<Matrix> qr(normal(n, n));
        return qr.householderQ() * Matrix::Identity(n, n);
    }

    // Symmetric positive definite with eigenvalues in [lo, hi].
    Matrix spd(Index n, double lo = 0.2, double hi = 2.0)
    {
        const Matrix q = orthogonal(n);
        Vector d(n);
        for (Index i = 0; i < n; ++i) {
            d(i) = uniform(lo, hi);
        }
        Matrix s = q * d.asDiagonal() * q.transpose();
        return 0.5 * (s + s.transpose());
    }
};

// Stacked relative deviation: max_k |a_k - b_k| / max_k |b_k|.
template <typename Get>
double seq_rel(const std::vector<nuvssm::Marginal>& a, const std::vector<nuvssm::Marginal>& b,
               Get get)
{
    double num = 0.0;
    double den = 1e-300;
    for (std::size_t k = 0; k < a.size(); ++k) {
        num = std::max(num, (get(a[k]) - get(b[k])).norm());
        den = std::max(den, get(b[k]).norm());
    }
    return num / den;
}

inline double mean_rel(const std::vector<nuvssm::Marginal>& a,
                       const std::vector<nuvssm::Marginal>& b)
{
    return seq_rel(a, b, [](const nuvssm::Marginal& m) -> Matrix { return m.mean; });
}

inline double cov_rel(const std::vector<nuvssm::Marginal>& a,
                      const std::vector<nuvssm::Marginal>& b)
{
    return seq_rel(a, b, [](const nuvssm::Marginal& m) -> Matrix { return m.cov; });
}

struct Problem {
    nuvssm::StateSpaceModel model;
    Matrix y;
};

// Random model with n <= max_n, m <= max_m, scalar output, horizon <= max_k.
// Singular values of A lie in [0.85, 1.05].
inline Problem random_problem(Rng& rng, Index max_n = 6, Index max_m = 2, Index max_k = 50,
                              Index l = 1)
{
    using nuvssm::InitialState;
    Problem p;
    auto& m = p.model;
    const Index n = rng.integer(1, max_n);
    const Index mi = rng.integer(1, max_m);
    const Matrix q = rng.orthogonal(n);
    Vector s(n);
    for (Index i = 0; i < n; ++i) {
        s(i) = rng.uniform(0.85, 1.05) * (rng.uniform(0, 1) < 0.3 ? -1.0 : 1.0);
    }
    const Matrix q2 = rng.orthogonal(n);
    m.A = q * s.asDiagonal() * q2.transpose();
    if (rng.uniform(0, 1) < 0.5) {
        m.A = q * s.asDiagonal() * q.transpose();
    }
    m.B = rng.normal(n, mi);
    m.C = rng.normal(l, n);
    m.obs_noise = l == 1 ? Matrix::Constant(1, 1, rng.uniform(0.05, 2.0)) : rng.spd(l, 0.1, 1.0);
    if (rng.uniform(0, 1) < 0.5) {
        m.input_cov = rng.spd(mi, 0.1, 1.5);
    } else {
        Vector d(mi);
        for (Index i = 0; i < mi; ++i) {
            d(i) = rng.uniform(0.0, 1.5);
        }
        m.input_cov = d.asDiagonal();
    }
    m.horizon = rng.integer(std::max<Index>(3 * n, 2), max_k);
    const double pick = rng.uniform(0, 1);
    if (pick < 0.4) {
        m.initial = InitialState::non_informative();
    } else if (pick < 0.6) {
        m.initial = InitialState::deterministic(rng.normal(n, 1));
    } else {
        m.initial = InitialState::gaussian(nuvssm::GaussianMoment(rng.normal(n, 1), rng.spd(n)));
    }
    p.y = rng.normal(m.horizon, l) * 2.0;
    return p;
}

}  // namespace testsupport

namespace testsupport {

// Largest posterior variance over the initial and all state marginals; large
// values flag nearly unidentifiable directions (poor observability).
inline double max_posterior_variance(const nuvssm::SmoothingResult& r)
{
    double v = r.initial.cov.size() > 0 ? r.initial.cov.diagonal().maxCoeff() : 0.0;
    for (const auto& s : r.state) {
        v = std::max(v, s.cov.diagonal().maxCoeff());
    }
    return v;
}

// Random problem whose dense posterior has all variances below `cap`, with
// the dense result returned alongside.
inline std::pair<Problem, nuvssm::SmoothingResult> conditioned_problem(Rng& rng, Index max_n,
                                                                       Index max_m, Index max_k,
                                                                       Index l = 1,
                                                                       double cap = 1e4)
{
    for (;;) {
        Problem p = random_problem(rng, max_n, max_m, max_k, l);
        nuvssm::SmoothingResult d = nuvssm::dense_joint_solve(p.model, p.y);
        if (max_posterior_variance(d) <= cap) {
            return {std::move(p), std::move(d)};
        }
    }
}

}  // namespace testsupport
