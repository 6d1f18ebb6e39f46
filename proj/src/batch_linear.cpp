#include "nuvssm/batch_linear.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace nuvssm {
namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

void check(const DictionaryModel& model, const Vector& sigmas)
{
    model.validate();
    if (sigmas.size() != model.count()) {
        throw DimensionError("sigmas must have one entry per atom");
    }
    if (!sigmas.allFinite() || (sigmas.array() < 0.0).any()) {
        throw std::invalid_argument("sigmas must be finite and non-negative");
    }
}

void check_index(const DictionaryModel& model, Index k)
{
    if (k < 0 || k >= model.count()) {
        throw std::out_of_range("atom index " + std::to_string(k) + " out of range");
    }
}

Matrix covariance(const DictionaryModel& model, const Vector& sigmas)
{
    return model.atoms * sigmas.asDiagonal() * model.atoms.transpose() +
           model.noise_var * Matrix::Identity(model.dim(), model.dim());
}

}  // namespace

void DictionaryModel::validate() const
{
    if (atoms.rows() == 0 || atoms.cols() == 0) {
        throw std::invalid_argument("dictionary needs at least one atom of positive dimension");
    }
    if (y.size() != atoms.rows()) {
        throw DimensionError("y must have " + std::to_string(atoms.rows()) + " entries");
    }
    if (!atoms.allFinite() || !y.allFinite()) {
        throw std::invalid_argument("dictionary entries must be finite");
    }
    if (!(noise_var > 0.0) || !std::isfinite(noise_var)) {
        throw std::invalid_argument("noise_var must be positive");
    }
    for (Index k = 0; k < atoms.cols(); ++k) {
        if (atoms.col(k).squaredNorm() == 0.0) {
            throw std::invalid_argument("atom " + std::to_string(k) + " is zero");
        }
    }
}

Matrix wtilde_recursive(const DictionaryModel& model, const Vector& sigmas, double* log_det_cov)
{
    check(model, sigmas);
    const Index n = model.dim();
    Matrix w = Matrix::Identity(n, n) / model.noise_var;
    double log_det = static_cast<double>(n) * std::log(model.noise_var);
    for (Index k = model.count() - 1; k >= 0; --k) {
        const double s = sigmas(k);
        if (s == 0.0) {
            continue;
        }
        const Vector wb = w * model.atoms.col(k);
        const double q = model.atoms.col(k).dot(wb);
        w.noalias() -= (s / (1.0 + s * q)) * wb * wb.transpose();
        log_det += std::log1p(s * q);
    }
    if (log_det_cov != nullptr) {
        *log_det_cov = log_det;
    }
    return linalg::symmetrize(w);
}

Matrix wtilde_direct(const DictionaryModel& model, const Vector& sigmas)
{
    check(model, sigmas);
    return linalg::spd_inverse(covariance(model, sigmas));
}

Matrix wk_direct(const DictionaryModel& model, const Vector& sigmas, Index k)
{
    check(model, sigmas);
    check_index(model, k);
    Vector others = sigmas;
    others(k) = 0.0;
    return linalg::spd_inverse(covariance(model, others));
}

Vector solve_map(const DictionaryModel& model, const Vector& sigmas)
{
    const Matrix w = wtilde_recursive(model, sigmas);
    const Vector wy = w * model.y;
    Vector u = Vector::Zero(model.count());
    for (Index k = 0; k < model.count(); ++k) {
        if (sigmas(k) > 0.0) {
            u(k) = sigmas(k) * model.atoms.col(k).dot(wy);
        }
    }
    return u;
}

double map_objective(const DictionaryModel& model, const Vector& sigmas, const Vector& u)
{
    check(model, sigmas);
    Vector r = model.y;
    double penalty = 0.0;
    for (Index k = 0; k < model.count(); ++k) {
        if (sigmas(k) > 0.0) {
            r -= model.atoms.col(k) * u(k);
            penalty += u(k) * u(k) / sigmas(k);
        }
    }
    return r.squaredNorm() / model.noise_var + penalty;
}

ScalarMoments posterior_moments(const DictionaryModel& model, const Vector& sigmas, Index k)
{
    check_index(model, k);
    const Matrix w = wtilde_recursive(model, sigmas);
    const auto b = model.atoms.col(k);
    const double s = sigmas(k);
    return {s * b.dot(w * model.y), s - s * s * b.dot(w * b)};
}

ScalarMoments backward_message_moments(const DictionaryModel& model, const Vector& sigmas, Index k)
{
    check_index(model, k);
    const Matrix w = wtilde_recursive(model, sigmas);
    const auto b = model.atoms.col(k);
    const double q = b.dot(w * b);
    return {b.dot(w * model.y) / q, 1.0 / q - sigmas(k)};
}

ScalarMoments backward_message_moments_wk(const DictionaryModel& model, const Vector& sigmas,
                                          Index k)
{
    const Matrix w = wk_direct(model, sigmas, k);
    const auto b = model.atoms.col(k);
    const double q = b.dot(w * b);
    return {b.dot(w * model.y) / q, 1.0 / q};
}

double log_likelihood(const DictionaryModel& model, const Vector& sigmas)
{
    double log_det = 0.0;
    const Matrix w = wtilde_recursive(model, sigmas, &log_det);
    return -0.5 * (static_cast<double>(model.dim()) * kLog2Pi + log_det + model.y.dot(w * model.y));
}

StationarityReport check_stationarity(const DictionaryModel& model, const Vector& sigmas,
                                      double tol)
{
    const Matrix wt = wtilde_recursive(model, sigmas);
    const Vector wty = wt * model.y;
    StationarityReport report;
    for (Index k = 0; k < model.count(); ++k) {
        const auto b = model.atoms.col(k);
        const Matrix wk = wk_direct(model, sigmas, k);
        StationarityEntry e;
        e.variance = sigmas(k);
        const double bwy = b.dot(wk * model.y);
        e.wk_quadratic = b.dot(wk * b);
        e.condition = bwy * bwy - e.wk_quadratic;
        const double bty = b.dot(wty);
        e.wt_lhs = bty * bty;
        e.wt_rhs = b.dot(wt * b);
        e.wt_residual = (e.wt_lhs - e.wt_rhs) / e.wt_rhs;
        if (e.variance > 0.0) {
            e.satisfied = std::abs(e.wt_residual) <= tol;
            report.max_active_residual = std::max(report.max_active_residual, std::abs(e.wt_residual));
        } else {
            e.satisfied = e.condition <= tol * e.wk_quadratic && e.wt_residual <= tol;
        }
        report.all_satisfied = report.all_satisfied && e.satisfied;
        report.entries.push_back(e);
    }
    return report;
}

NuvStatistics dictionary_statistics(const DictionaryModel& model, const Vector& sigmas)
{
    double log_det = 0.0;
    const Matrix w = wtilde_recursive(model, sigmas, &log_det);
    const Vector wy = w * model.y;
    const Index kk = model.count();
    NuvStatistics s;
    s.log_likelihood =
        -0.5 * (static_cast<double>(model.dim()) * kLog2Pi + log_det + model.y.dot(wy));
    s.post_mean.resize(kk);
    s.post_var.resize(kk);
    s.bwd_mean.resize(kk);
    s.bwd_var.resize(kk);
    for (Index k = 0; k < kk; ++k) {
        const auto b = model.atoms.col(k);
        const double q = b.dot(w * b);
        const double r = b.dot(wy);
        const double sk = sigmas(k);
        s.post_mean(k) = sk * r;
        s.post_var(k) = std::max(0.0, sk - sk * sk * q);
        s.bwd_mean(k) = r / q;
        s.bwd_var(k) = 1.0 / q - sk;
    }
    return s;
}

NuvState run_nuv(const DictionaryModel& model, const NuvConfig& config,
                 std::vector<IterationRecord>* trace)
{
    model.validate();
    const double power =
        std::max(model.y.squaredNorm() / static_cast<double>(model.dim()), model.noise_var);
    const std::vector<bool> excluded(static_cast<std::size_t>(model.count()), false);
    return run_nuv_loop([&](const Vector& v) { return dictionary_statistics(model, v); }, excluded,
                        config, power, trace);
}

}  // namespace nuvssm
