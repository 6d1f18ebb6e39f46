#include "nuvssm/nuv_em.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace nuvssm {
namespace {

constexpr double kMacKayGuard = 1e-12;

double relative_change(double old_value, double new_value, double floor)
{
    const double scale = std::max({old_value, new_value, floor, 1e-300});
    return std::abs(new_value - old_value) / scale;
}

void record(std::vector<IterationRecord>* trace, const NuvState& st, const char* phase,
            double max_change)
{
    if (trace == nullptr) {
        return;
    }
    Index active = 0;
    for (Index i = 0; i < st.variances.size(); ++i) {
        active += st.variances(i) > 0.0 ? 1 : 0;
    }
    trace->push_back({st.iteration, phase, st.loglik_history.back(), active, max_change});
}

}  // namespace

UpdateRule parse_update_rule(const std::string& name)
{
    if (name == "em") {
        return UpdateRule::Em;
    }
    if (name == "mackay") {
        return UpdateRule::MacKay;
    }
    if (name == "em_then_ml") {
        return UpdateRule::EmThenMl;
    }
    throw std::invalid_argument("unknown update rule '" + name + "' (em, mackay, em_then_ml)");
}

std::string to_string(UpdateRule rule)
{
    switch (rule) {
    case UpdateRule::Em:
        return "em";
    case UpdateRule::MacKay:
        return "mackay";
    case UpdateRule::EmThenMl:
        return "em_then_ml";
    }
    return "?";
}

void NuvConfig::validate() const
{
    if (max_iters < 1) {
        throw std::invalid_argument("max_iters must be positive");
    }
    if (!(rel_tol > 0.0)) {
        throw std::invalid_argument("rel_tol must be positive");
    }
    if (variance_floor && !(*variance_floor >= 0.0)) {
        throw std::invalid_argument("variance_floor must be non-negative");
    }
    if (!(init_variance > 0.0) || !std::isfinite(init_variance)) {
        throw std::invalid_argument("init_variance must be positive");
    }
    if (warmup_iters < 0) {
        throw std::invalid_argument("warmup_iters must be non-negative");
    }
}

void write_trace_csv(std::ostream& os, const std::vector<IterationRecord>& trace)
{
    os << "iteration,phase,loglik,active,max_change\n";
    const auto old_precision = os.precision(17);
    for (const auto& r : trace) {
        os << r.iteration << ',' << r.phase << ',' << r.loglik << ',' << r.active << ','
           << r.max_change << '\n';
    }
    os.precision(old_precision);
}

double em_update(double m, double v)
{
    if (v < 0.0 || !std::isfinite(v) || !std::isfinite(m)) {
        throw std::invalid_argument("em_update: posterior variance must be finite and >= 0");
    }
    return m * m + v;
}

std::optional<double> mackay_update(double m, double v, double old)
{
    if (!(old > 0.0)) {
        return std::nullopt;
    }
    const double denom = 1.0 - v / old;
    if (denom <= kMacKayGuard) {
        return std::nullopt;
    }
    return m * m / denom;
}

double ml_update(double mb, double vb)
{
    if (!std::isfinite(mb) || !std::isfinite(vb) || !(vb > 0.0)) {
        throw std::invalid_argument("ml_update: backward message must be finite with vb > 0");
    }
    return std::max(0.0, mb * mb - vb);
}

NuvState run_nuv_loop(const NuvEvaluator& evaluate, const std::vector<bool>& excluded,
                      const NuvConfig& config, double signal_power,
                      std::vector<IterationRecord>* trace)
{
    config.validate();
    const auto count = static_cast<Index>(excluded.size());
    NuvState st;
    st.variance_floor = config.variance_floor.value_or(1e-9 * signal_power);
    st.frozen = excluded;
    st.variances = Vector::Zero(count);
    for (Index p = 0; p < count; ++p) {
        if (!excluded[static_cast<std::size_t>(p)]) {
            st.variances(p) = config.init_variance;
        }
    }
    const double floor = st.variance_floor;
    NuvStatistics stats = evaluate(st.variances);
    st.loglik_history.push_back(stats.log_likelihood);
    record(trace, st, "init", 0.0);

    const bool ml_phase = config.update_rule == UpdateRule::EmThenMl;
    const int em_iters = ml_phase ? std::min(config.warmup_iters, config.max_iters)
                                  : config.max_iters;
    const char* em_name = config.update_rule == UpdateRule::MacKay ? "mackay" : "em";
    bool em_converged = false;
    for (int it = 0; it < em_iters; ++it) {
        Vector next = st.variances;
        double max_change = 0.0;
        st.mackay_fallbacks.clear();
        for (Index p = 0; p < count; ++p) {
            if (st.frozen[static_cast<std::size_t>(p)]) {
                continue;
            }
            const double old = st.variances(p);
            double value = 0.0;
            if (config.update_rule == UpdateRule::MacKay) {
                const auto r = mackay_update(stats.post_mean(p), stats.post_var(p), old);
                if (!r) {
                    st.mackay_fallbacks.push_back(p);
                }
                value = r ? *r : em_update(stats.post_mean(p), stats.post_var(p));
            } else {
                value = em_update(stats.post_mean(p), stats.post_var(p));
            }
            if (value < floor && value <= old) {
                value = 0.0;
                st.frozen[static_cast<std::size_t>(p)] = true;
            }
            max_change = std::max(max_change, relative_change(old, value, floor));
            next(p) = value;
        }
        st.variances = next;
        stats = evaluate(st.variances);
        st.loglik_history.push_back(stats.log_likelihood);
        ++st.iteration;
        record(trace, st, em_name, max_change);
        const bool all_frozen = std::all_of(st.frozen.begin(), st.frozen.end(), [](bool f) { return f; });
        if (max_change < config.rel_tol || all_frozen) {
            em_converged = true;
            break;
        }
    }
    st.converged = em_converged;

    if (ml_phase) {
        // Sequential coordinate-wise ML over every non-excluded index; an index
        // frozen during warm-up is revisited here.
        st.converged = false;
        const double refresh = config.rel_tol * 1e-3;
        for (int pass = st.iteration; pass < config.max_iters; ++pass) {
            double max_change = 0.0;
            for (Index p = 0; p < count; ++p) {
                if (excluded[static_cast<std::size_t>(p)]) {
                    continue;
                }
                const double old = st.variances(p);
                double value = 0.0;
                if (std::isfinite(stats.bwd_var(p))) {
                    value = ml_update(stats.bwd_mean(p),
                                      std::max(stats.bwd_var(p), std::numeric_limits<double>::min()));
                }
                if (value < floor) {
                    value = 0.0;
                }
                const double change = relative_change(old, value, floor);
                max_change = std::max(max_change, change);
                st.frozen[static_cast<std::size_t>(p)] = value == 0.0;
                if (value != old) {
                    st.variances(p) = value;
                    if (change > refresh || (old == 0.0) != (value == 0.0)) {
                        stats = evaluate(st.variances);
                    }
                }
            }
            stats = evaluate(st.variances);
            st.loglik_history.push_back(stats.log_likelihood);
            ++st.iteration;
            record(trace, st, "ml", max_change);
            if (max_change < config.rel_tol) {
                st.converged = true;
                break;
            }
        }
    }

    for (Index p = 0; p < count; ++p) {
        if (st.variances(p) > 0.0) {
            st.active_set.push_back(p);
        }
    }
    return st;
}

// ---------------------------------------------------------------------------

Index nuv_point_count(const StateSpaceModel& model)
{
    const auto q = static_cast<Index>(model.nuv_inputs.size());
    return model.horizon * q + (model.nuv_output ? model.horizon : 0);
}

NuvOverrides overrides_from_variances(const StateSpaceModel& model, const Vector& variances)
{
    const auto q = static_cast<Index>(model.nuv_inputs.size());
    if (variances.size() != nuv_point_count(model)) {
        throw DimensionError("variance vector has the wrong length");
    }
    NuvOverrides o;
    o.input_var = Matrix::Zero(model.horizon, q);
    for (Index k = 0; k < model.horizon; ++k) {
        for (Index i = 0; i < q; ++i) {
            o.input_var(k, i) = variances(k * q + i);
        }
    }
    if (model.nuv_output) {
        o.output_var = variances.segment(model.horizon * q, model.horizon);
    }
    return o;
}

namespace {

void backward_from_dual(double dxi, double w, double variance, double& mb, double& vb)
{
    if (!(w > 0.0)) {
        mb = 0.0;
        vb = std::numeric_limits<double>::infinity();
        return;
    }
    vb = 1.0 / w - variance;
    mb = -dxi / w;
}

}  // namespace

NuvStatistics nuv_statistics(const StateSpaceModel& model, const SmoothingResult& result,
                             const Vector& variances)
{
    const auto q = static_cast<Index>(model.nuv_inputs.size());
    const Index count = nuv_point_count(model);
    if (variances.size() != count) {
        throw DimensionError("variance vector has the wrong length");
    }
    NuvStatistics s;
    s.log_likelihood = result.log_likelihood;
    s.post_mean.resize(count);
    s.post_var.resize(count);
    s.bwd_mean.resize(count);
    s.bwd_var.resize(count);
    for (Index k = 0; k < model.horizon; ++k) {
        const auto ks = static_cast<std::size_t>(k);
        const Marginal& u = result.input[ks];
        const DualMarginal& d = result.input_dual[ks];
        for (Index i = 0; i < q; ++i) {
            const Index j = model.nuv_inputs[static_cast<std::size_t>(i)];
            const Index p = k * q + i;
            s.post_mean(p) = u.mean(j);
            s.post_var(p) = std::max(0.0, u.cov(j, j));
            backward_from_dual(d.dxi(j), d.dprec(j, j), variances(p), s.bwd_mean(p), s.bwd_var(p));
        }
        if (model.nuv_output) {
            const Index p = model.horizon * q + k;
            const DualMarginal& d0 = result.outlier_dual[ks];
            s.post_mean(p) = result.outlier[ks].mean(0);
            s.post_var(p) = std::max(0.0, result.outlier[ks].cov(0, 0));
            backward_from_dual(d0.dxi(0), d0.dprec(0, 0), variances(p), s.bwd_mean(p), s.bwd_var(p));
        }
    }
    return s;
}

NuvRun run_nuv(const StateSpaceModel& model, const Matrix& y, const NuvConfig& config)
{
    model.validate();
    const auto q = static_cast<Index>(model.nuv_inputs.size());
    const Index count = nuv_point_count(model);
    if (count == 0) {
        throw std::invalid_argument("run_nuv: model declares no NUV attachment points");
    }
    std::vector<bool> excluded(static_cast<std::size_t>(count), false);
    for (Index k = 0; k < std::min(model.nuv_first_step, model.horizon); ++k) {
        for (Index i = 0; i < q; ++i) {
            excluded[static_cast<std::size_t>(k * q + i)] = true;
        }
    }
    double power = 0.0;
    if (y.size() > 0) {
        power = y.squaredNorm() / static_cast<double>(y.size());
    }
    power = std::max(power, model.obs_noise.trace() / static_cast<double>(model.output_dim()));

    NuvRun run;
    auto evaluate = [&](const Vector& variances) {
        const NuvOverrides o = overrides_from_variances(model, variances);
        run.result = smooth(config.smoother, model, y, &o);
        return nuv_statistics(model, run.result, variances);
    };
    run.state = run_nuv_loop(evaluate, excluded, config, power, &run.trace);
    return run;
}

}  // namespace nuvssm
