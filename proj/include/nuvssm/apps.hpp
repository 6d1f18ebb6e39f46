#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nuvssm/nuv_em.hpp"
#include "nuvssm/ssm.hpp"

namespace nuvssm::apps {

enum class ModelKind { Steps, Walk, Lines, Polynomial, Oscillator };
enum class EventKind { Jump, SlopeChange, CurvatureChange, Outlier };

std::string to_string(EventKind kind);

/// State space model plus the meaning of each NUV input.
struct AppModel {
    StateSpaceModel ssm;
    ModelKind kind = ModelKind::Steps;  // of the underlying signal model
    std::vector<EventKind> input_events;  // parallel to ssm.nuv_inputs
};

/// Piecewise constant: n = 1, one NUV jump input per step.
AppModel build_step_model(Index horizon, double sigma2);

/// Random walk (white input of variance walk_var) plus NUV jumps.
AppModel build_walk_model(Index horizon, double sigma2, double walk_var);

/// Piecewise polynomial of degree 1 or 2 from an integrator chain. Each state
/// component gets a NUV input; `continuity` drops the one on the level.
AppModel build_polynomial_model(Index horizon, double sigma2, int degree, bool continuity);

/// Piecewise linear: build_polynomial_model with degree 1.
AppModel build_line_model(Index horizon, double sigma2, bool continuity);

/// Adds a per-step NUV output term to a scalar-output model; the base noise
/// variance becomes sigma2.
AppModel build_outlier_model(AppModel base, double sigma2);

/// Two-dimensional damped oscillator driven by white noise, observed through
/// its first component. The default builder for outlier removal.
AppModel build_oscillator_model(Index horizon, double sigma2, double process_var,
                                double radius = 0.98, double period = 25.0);

struct Event {
    Index index = 0;
    EventKind kind = EventKind::Jump;
    double magnitude = 0.0;
    double variance = 0.0;  // learned NUV variance
};

struct Segment {
    Index start = 0;
    Index end = 0;  // inclusive
    Vector params;  // level (steps, walk); level at start and slope (lines);
                    // plus curvature for degree 2
};

struct FitResult {
    Vector observed;
    Vector smoothed;
    std::vector<Event> events;  // sorted by index, then kind
    std::vector<Segment> segments;
    Vector step_variance;  // largest learned NUV variance per step
    NuvState state;
};

/// Events at the active NUV points, segments as maximal runs between
/// non-outlier events.
FitResult extract_events(const AppModel& model, const NuvState& state,
                         const SmoothingResult& result, const Matrix& y);

FitResult fit(const AppModel& model, const Matrix& y, const NuvConfig& config = {},
              std::vector<IterationRecord>* trace = nullptr);

// ---------------------------------------------------------------------------
// Synthetic signals

struct SimulationSpec {
    std::string kind = "steps";  // steps, walk, lines, outliers
    Index horizon = 200;
    int events = 1;
    double noise_sd = 0.1;
    double magnitude = 10.0;  // jump height, slope change or outlier size
    double walk_sd = 0.1;
    std::uint64_t seed = 1;
};

struct Simulation {
    Vector y;
    Vector truth;  // noise-free signal (outliers excluded)
    std::vector<Index> event_index;
};

Simulation simulate(const SimulationSpec& spec);

}  // namespace nuvssm::apps
