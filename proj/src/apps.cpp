#include "nuvssm/apps.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace nuvssm::apps {
namespace {

void require_positive(double v, const char* what)
{
    if (!(v > 0.0) || !std::isfinite(v)) {
        throw std::invalid_argument(std::string(what) + " must be positive");
    }
}

void require_horizon(Index horizon, Index minimum)
{
    if (horizon < minimum) {
        throw std::invalid_argument("horizon must be at least " + std::to_string(minimum));
    }
}

StateSpaceModel scalar_base(Index horizon, double sigma2)
{
    StateSpaceModel m;
    m.A = Matrix::Identity(1, 1);
    m.C = Matrix::Identity(1, 1);
    m.obs_noise = Matrix::Constant(1, 1, sigma2);
    m.horizon = horizon;
    m.initial = InitialState::non_informative();
    m.nuv_first_step = 1;
    return m;
}

}  // namespace

std::string to_string(EventKind kind)
{
    switch (kind) {
    case EventKind::Jump:
        return "jump";
    case EventKind::SlopeChange:
        return "slope-change";
    case EventKind::CurvatureChange:
        return "curvature-change";
    case EventKind::Outlier:
        return "outlier";
    }
    return "?";
}

AppModel build_step_model(Index horizon, double sigma2)
{
    require_horizon(horizon, 1);
    require_positive(sigma2, "sigma2");
    AppModel a;
    a.ssm = scalar_base(horizon, sigma2);
    a.ssm.B = Matrix::Identity(1, 1);
    a.ssm.input_cov = Matrix::Zero(1, 1);
    a.ssm.nuv_inputs = {0};
    a.kind = ModelKind::Steps;
    a.input_events = {EventKind::Jump};
    return a;
}

AppModel build_walk_model(Index horizon, double sigma2, double walk_var)
{
    require_horizon(horizon, 1);
    require_positive(sigma2, "sigma2");
    require_positive(walk_var, "walk_var");
    AppModel a;
    a.ssm = scalar_base(horizon, sigma2);
    a.ssm.B = Matrix::Ones(1, 2);
    a.ssm.input_cov = Matrix::Zero(2, 2);
    a.ssm.input_cov(0, 0) = walk_var;
    a.ssm.nuv_inputs = {1};
    a.kind = ModelKind::Walk;
    a.input_events = {EventKind::Jump};
    return a;
}

AppModel build_polynomial_model(Index horizon, double sigma2, int degree, bool continuity)
{
    if (degree < 1 || degree > 2) {
        throw std::invalid_argument("polynomial degree must be 1 or 2");
    }
    require_horizon(horizon, degree + 1);
    require_positive(sigma2, "sigma2");
    const Index n = degree + 1;
    AppModel a;
    StateSpaceModel& m = a.ssm;
    m.A = Matrix::Identity(n, n);
    for (Index i = 0; i + 1 < n; ++i) {
        m.A(i, i + 1) = 1.0;
    }
    m.C = Matrix::Zero(1, n);
    m.C(0, 0) = 1.0;
    m.obs_noise = Matrix::Constant(1, 1, sigma2);
    m.horizon = horizon;
    m.initial = InitialState::non_informative();
    m.nuv_first_step = 1;
    const Index first = continuity ? 1 : 0;
    m.B = Matrix::Identity(n, n).rightCols(n - first);
    m.input_cov = Matrix::Zero(n - first, n - first);
    const EventKind kinds[] = {EventKind::Jump, EventKind::SlopeChange, EventKind::CurvatureChange};
    for (Index j = first; j < n; ++j) {
        m.nuv_inputs.push_back(j - first);
        a.input_events.push_back(kinds[j]);
    }
    a.kind = degree == 1 ? ModelKind::Lines : ModelKind::Polynomial;
    return a;
}

AppModel build_line_model(Index horizon, double sigma2, bool continuity)
{
    return build_polynomial_model(horizon, sigma2, 1, continuity);
}

AppModel build_outlier_model(AppModel base, double sigma2)
{
    require_positive(sigma2, "sigma2");
    if (base.ssm.output_dim() != 1) {
        throw std::invalid_argument("outlier model requires a scalar output");
    }
    base.ssm.obs_noise = Matrix::Constant(1, 1, sigma2);
    base.ssm.nuv_output = true;
    return base;
}

AppModel build_oscillator_model(Index horizon, double sigma2, double process_var, double radius,
                                double period)
{
    require_horizon(horizon, 2);
    require_positive(sigma2, "sigma2");
    require_positive(process_var, "process_var");
    require_positive(radius, "radius");
    require_positive(period, "period");
    const double th = 2.0 * std::numbers::pi / period;
    AppModel a;
    StateSpaceModel& m = a.ssm;
    m.A.resize(2, 2);
    m.A << radius * std::cos(th), -radius * std::sin(th), radius * std::sin(th),
        radius * std::cos(th);
    m.B = Matrix::Identity(2, 2);
    m.input_cov = process_var * Matrix::Identity(2, 2);
    m.C = Matrix::Zero(1, 2);
    m.C(0, 0) = 1.0;
    m.obs_noise = Matrix::Constant(1, 1, sigma2);
    m.horizon = horizon;
    m.initial = InitialState::non_informative();
    a.kind = ModelKind::Oscillator;
    return a;
}

FitResult extract_events(const AppModel& model, const NuvState& state,
                         const SmoothingResult& result, const Matrix& y)
{
    const StateSpaceModel& m = model.ssm;
    const Index kk = m.horizon;
    const auto q = static_cast<Index>(m.nuv_inputs.size());
    FitResult r;
    r.state = state;
    r.observed = y.col(0);
    r.smoothed.resize(kk);
    for (Index k = 0; k < kk; ++k) {
        r.smoothed(k) = result.output[static_cast<std::size_t>(k)].mean(0);
    }
    r.step_variance = Vector::Zero(kk);
    for (Index p : state.active_set) {
        Event e;
        e.variance = state.variances(p);
        if (p < kk * q) {
            e.index = p / q;
            const Index i = p % q;
            e.kind = model.input_events[static_cast<std::size_t>(i)];
            e.magnitude = result.input[static_cast<std::size_t>(e.index)].mean(
                m.nuv_inputs[static_cast<std::size_t>(i)]);
        } else {
            e.index = p - kk * q;
            e.kind = EventKind::Outlier;
            e.magnitude = result.outlier[static_cast<std::size_t>(e.index)].mean(0);
        }
        r.step_variance(e.index) = std::max(r.step_variance(e.index), e.variance);
        r.events.push_back(e);
    }
    std::stable_sort(r.events.begin(), r.events.end(), [](const Event& a, const Event& b) {
        return a.index != b.index ? a.index < b.index : a.kind < b.kind;
    });

    std::vector<Index> starts{0};
    for (const auto& e : r.events) {
        if (e.kind != EventKind::Outlier && e.index > starts.back()) {
            starts.push_back(e.index);
        }
    }
    for (std::size_t s = 0; s < starts.size(); ++s) {
        Segment seg;
        seg.start = starts[s];
        seg.end = s + 1 < starts.size() ? starts[s + 1] - 1 : kk - 1;
        const Index len = seg.end - seg.start + 1;
        if (model.kind == ModelKind::Lines || model.kind == ModelKind::Polynomial) {
            const Index n = m.state_dim();
            seg.params = Vector::Zero(n);
            seg.params(0) = r.smoothed(seg.start);
            for (Index k = seg.start; k <= seg.end; ++k) {
                seg.params.tail(n - 1) += result.state[static_cast<std::size_t>(k)].mean.tail(n - 1);
            }
            seg.params.tail(n - 1) /= static_cast<double>(len);
        } else {
            seg.params = Vector::Constant(1, r.smoothed.segment(seg.start, len).mean());
        }
        r.segments.push_back(seg);
    }
    return r;
}

FitResult fit(const AppModel& model, const Matrix& y, const NuvConfig& config,
              std::vector<IterationRecord>* trace)
{
    NuvRun run = run_nuv(model.ssm, y, config);
    if (trace != nullptr) {
        *trace = run.trace;
    }
    return extract_events(model, run.state, run.result, y);
}

// ---------------------------------------------------------------------------

namespace {

// Sorted distinct positions in [lo, hi] with pairwise gap >= gap.
std::vector<Index> draw_positions(std::mt19937_64& gen, int count, Index lo, Index hi, Index gap)
{
    if (count <= 0) {
        return {};
    }
    if (hi < lo || (hi - lo) < gap * (count - 1)) {
        throw std::invalid_argument("horizon too short for the requested number of events");
    }
    std::uniform_int_distribution<Index> pick(lo, hi);
    for (;;) {
        std::vector<Index> pos;
        for (int i = 0; i < count; ++i) {
            pos.push_back(pick(gen));
        }
        std::sort(pos.begin(), pos.end());
        bool ok = true;
        for (std::size_t i = 1; i < pos.size(); ++i) {
            ok = ok && pos[i] - pos[i - 1] >= gap;
        }
        if (ok) {
            return pos;
        }
    }
}

}  // namespace

Simulation simulate(const SimulationSpec& spec)
{
    const Index kk = spec.horizon;
    require_horizon(kk, 10);
    if (spec.events < 0) {
        throw std::invalid_argument("event count must be non-negative");
    }
    if (!(spec.noise_sd >= 0.0) || !(spec.walk_sd >= 0.0)) {
        throw std::invalid_argument("standard deviations must be non-negative");
    }
    std::mt19937_64 gen(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::bernoulli_distribution coin(0.5);
    auto sign = [&] { return coin(gen) ? 1.0 : -1.0; };

    Simulation sim;
    sim.truth = Vector::Zero(kk);
    const Index margin = std::max<Index>(2, kk / 10);
    const Index gap = std::max<Index>(3, kk / (4 * (spec.events + 1)));
    sim.event_index = draw_positions(gen, spec.events, margin, kk - 1 - margin, gap);
    auto is_event = [&](Index k) {
        return std::binary_search(sim.event_index.begin(), sim.event_index.end(), k);
    };
    Vector outlier = Vector::Zero(kk);

    if (spec.kind == "steps" || spec.kind == "walk") {
        double level = 0.0;
        bool first = true;
        for (Index k = 0; k < kk; ++k) {
            if (spec.kind == "walk" && k > 0) {
                level += spec.walk_sd * normal(gen);
            }
            if (is_event(k)) {
                level += (first ? 1.0 : sign()) * spec.magnitude;
                first = false;
            }
            sim.truth(k) = level;
        }
    } else if (spec.kind == "lines") {
        double level = 0.0;
        double slope = 0.05 * normal(gen);
        for (Index k = 0; k < kk; ++k) {
            if (k > 0) {
                if (is_event(k)) {
                    slope += sign() * spec.magnitude;
                }
                level += slope;
            }
            sim.truth(k) = level;
        }
    } else if (spec.kind == "outliers") {
        const AppModel osc = build_oscillator_model(kk, 1.0, 1.0);
        Vector x = Vector::Zero(2);
        for (Index k = 0; k < kk; ++k) {
            Vector w(2);
            w << normal(gen), normal(gen);
            x = osc.ssm.A * x + spec.walk_sd * w;
            sim.truth(k) = x(0);
            if (is_event(k)) {
                outlier(k) = sign() * spec.magnitude;
            }
        }
    } else {
        throw std::invalid_argument("unknown simulation kind '" + spec.kind +
                                    "' (steps, walk, lines, outliers)");
    }
    sim.y.resize(kk);
    for (Index k = 0; k < kk; ++k) {
        sim.y(k) = sim.truth(k) + outlier(k) + spec.noise_sd * normal(gen);
    }
    return sim;
}

}  // namespace nuvssm::apps
