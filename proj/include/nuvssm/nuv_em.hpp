#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "nuvssm/ssm.hpp"

namespace nuvssm {

enum class UpdateRule { Em, MacKay, EmThenMl };

UpdateRule parse_update_rule(const std::string& name);
std::string to_string(UpdateRule rule);

struct NuvConfig {
    UpdateRule update_rule = UpdateRule::EmThenMl;
    int max_iters = 500;  // total, warm-up included
    double rel_tol = 1e-6;
    /// Absolute threshold; unset means 1e-9 times the problem's signal power.
    std::optional<double> variance_floor;
    double init_variance = 1.0;
    /// EM iterations before the sequential ML phase of EmThenMl.
    int warmup_iters = 100;
    SmootherKind smoother = SmootherKind::Mbf;

    void validate() const;
};

struct NuvState {
    Vector variances;
    int iteration = 0;
    std::vector<double> loglik_history;
    bool converged = false;
    std::vector<Index> active_set;
    std::vector<bool> frozen;
    double variance_floor = 0.0;
    std::vector<Index> mackay_fallbacks;  // indices that fell back to EM, last iteration
};

struct IterationRecord {
    int iteration = 0;
    std::string phase;  // "em", "mackay", "ml"
    double loglik = 0.0;
    Index active = 0;
    double max_change = 0.0;
};

/// Columns: iteration,phase,loglik,active,max_change
void write_trace_csv(std::ostream& os, const std::vector<IterationRecord>& trace);

/// m^2 + v. Throws std::invalid_argument for negative v.
double em_update(double m, double v);
/// m^2 / (1 - v / old); nullopt when the denominator is <= 1e-12.
std::optional<double> mackay_update(double m, double v, double old);
/// max(0, mb^2 - vb). Throws for non-finite input or vb <= 0.
double ml_update(double mb, double vb);

/// Per-index posterior and backward-message moments of the NUV variables at
/// the given variances.
struct NuvStatistics {
    double log_likelihood = 0.0;
    Vector post_mean;
    Vector post_var;
    Vector bwd_mean;
    Vector bwd_var;  // +inf for a non-informative backward message
};

using NuvEvaluator = std::function<NuvStatistics(const Vector& variances)>;

/// Generic outer loop. `excluded` indices are held at zero throughout.
/// `signal_power` scales the default variance floor.
NuvState run_nuv_loop(const NuvEvaluator& evaluate, const std::vector<bool>& excluded,
                      const NuvConfig& config, double signal_power,
                      std::vector<IterationRecord>* trace = nullptr);

// ---------------------------------------------------------------------------
// State space models

/// NUV attachment points of a model: input (k, i) maps to k * q + i with q the
/// number of NUV inputs; output outlier terms follow at horizon * q + k.
Index nuv_point_count(const StateSpaceModel& model);
NuvOverrides overrides_from_variances(const StateSpaceModel& model, const Vector& variances);
NuvStatistics nuv_statistics(const StateSpaceModel& model, const SmoothingResult& result,
                             const Vector& variances);

struct NuvRun {
    NuvState state;
    SmoothingResult result;  // at the final variances
    std::vector<IterationRecord> trace;
};

NuvRun run_nuv(const StateSpaceModel& model, const Matrix& y, const NuvConfig& config = {});

}  // namespace nuvssm
