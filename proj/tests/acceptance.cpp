// Acceptance checks: one PASS/FAIL line per criterion.
// Usage: acceptance <path-to-nuvssm-cli>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <unistd.h>

#include "nuvssm/apps.hpp"
#include "nuvssm/batch_linear.hpp"
#include "oracles.hpp"

using namespace nuvssm;
using testsupport::Rng;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v)
{
    char b[32];
    std::snprintf(b, sizeof b, "%.3g", v);
    return b;
}

// ---------------------------------------------------------------------------

Outcome smoother_equivalence()
{
    Rng rng(1001);
    double mean_dev = 0.0;
    double cov_dev = 0.0;
    for (int t = 0; t < 200; ++t) {
        const auto [p, d] = testsupport::conditioned_problem(rng, 6, 2, 50);
        for (auto kind : {SmootherKind::Mbf, SmootherKind::Bifm}) {
            const SmoothingResult r = smooth(kind, p.model, p.y);
            mean_dev = std::max({mean_dev, testsupport::mean_rel(r.state, d.state),
                                 testsupport::mean_rel(r.input, d.input)});
            cov_dev = std::max({cov_dev, testsupport::cov_rel(r.state, d.state),
                                testsupport::cov_rel(r.input, d.input)});
        }
    }
    return {mean_dev < 1e-8 && cov_dev < 1e-7,
            "200 models, max mean dev " + fmt(mean_dev) + ", max cov dev " + fmt(cov_dev)};
}

Outcome duality_suite()
{
    Rng rng(1002);
    double worst = 0.0;
    for (int t = 0; t < 1000; ++t) {
        worst = std::max(worst, testsupport::edge_identity_residual(rng, 1 + t % 6));
    }
    return {worst < 1e-10, "1000 pairs, max residual " + fmt(worst)};
}

Outcome inversion_free()
{
    Rng rng(1003);
    std::size_t above = 0;
    std::size_t scalar = 0;
    for (int t = 0; t < 40; ++t) {
        auto p = testsupport::random_problem(rng, 6, 1, 50);
        const Index n = p.model.state_dim();
        if (t % 2 == 0) {
            Vector d(n);
            for (Index i = 0; i < n; ++i) {
                d(i) = rng.uniform(0.1, 1.0);
            }
            p.model.initial = InitialState::gaussian(GaussianMoment(rng.normal(n, 1), d.asDiagonal()));
        } else {
            p.model.initial = InitialState::deterministic(rng.normal(n, 1));
        }
        for (auto kind : {SmootherKind::Mbf, SmootherKind::Bifm}) {
            instrumentation::ScopedFactorizationTally tally;
            (void)smooth(kind, p.model, p.y);
            above += tally.tally().count_above(1);
            scalar += tally.tally().total();
        }
    }
    return {above == 0, "40 scalar-I/O models x 2 smoothers, " + std::to_string(above) +
                            " factorizations above 1x1 (" + std::to_string(scalar) + " scalar)"};
}

Outcome wtilde_recursion()
{
    Rng rng(1004);
    double worst = 0.0;
    for (int t = 0; t < 500; ++t) {
        const Index n = rng.integer(1, 8);
        const Index kk = rng.integer(1, 64);
        DictionaryModel d{rng.normal(n, kk), rng.uniform(0.1, 2.0), rng.normal(n, 1)};
        Vector s(kk);
        for (Index k = 0; k < kk; ++k) {
            s(k) = rng.uniform(0, 1) < 0.3 ? 0.0 : rng.uniform(0.0, 3.0);
        }
        worst = std::max(worst, linalg::rel_diff(wtilde_recursive(d, s), wtilde_direct(d, s)));
    }

    const Index n = 8;
    std::vector<double> per_call;
    for (Index kk : {64, 128, 256, 512}) {
        DictionaryModel d{rng.normal(n, kk), 0.5, rng.normal(n, 1)};
        const Vector s = Vector::Constant(kk, 1.0);
        const int reps = static_cast<int>(200000 / kk);
        double best = INFINITY;
        volatile double sink = 0.0;
        for (int trial = 0; trial < 7; ++trial) {
            const auto t0 = Clock::now();
            for (int r = 0; r < reps; ++r) {
                sink = sink + wtilde_recursive(d, s)(0, 0);
            }
            best = std::min(best, seconds_since(t0) / reps);
        }
        per_call.push_back(best);
    }
    double worst_ratio = 0.0;
    const double ks[] = {64, 128, 256, 512};
    for (std::size_t i = 1; i < per_call.size(); ++i) {
        worst_ratio = std::max(worst_ratio, (per_call[i] / per_call[0]) / (ks[i] / ks[0]));
    }
    return {worst < 1e-10 && worst_ratio <= 1.3,
            "500 instances, max rel dev " + fmt(worst) + "; runtime vs linear at K=128..512 " +
                fmt(worst_ratio) + "x (limit 1.3)"};
}

Outcome scalar_closed_form()
{
    StateSpaceModel m;
    m.A = Matrix::Identity(1, 1);
    m.B = Matrix::Identity(1, 1);
    m.C = Matrix::Identity(1, 1);
    m.obs_noise = Matrix::Constant(1, 1, 1.0);
    m.input_cov = Matrix::Zero(1, 1);
    m.horizon = 1;
    m.initial = InitialState::deterministic(Vector::Zero(1));
    m.nuv_inputs = {0};
    double worst = 0.0;
    bool converged = true;
    for (double mu : {0.0, 0.5, 1.0, 2.0, 5.0}) {
        const NuvRun run = run_nuv(m, as_observations({mu}));
        const double s2 = std::max(0.0, mu * mu - 1.0);
        const double u = mu == 0.0 ? 0.0 : mu * s2 / (mu * mu);
        converged = converged && run.state.converged;
        worst = std::max({worst, std::abs(run.state.variances(0) - s2),
                          std::abs(run.result.input[0].mean(0) - u)});
    }
    return {converged && worst < 1e-8, "5 values of mu, max abs error " + fmt(worst)};
}

DictionaryModel random_dictionary(Rng& rng)
{
    const Index n = rng.integer(3, 12);
    const Index kk = rng.integer(2, 20);
    DictionaryModel d{rng.normal(n, kk), rng.uniform(0.05, 1.0), Vector::Zero(n)};
    const Index active = rng.integer(0, std::min<Index>(3, kk));
    for (Index i = 0; i < active; ++i) {
        d.y += d.atoms.col(rng.integer(0, kk - 1)) * rng.uniform(-3.0, 3.0);
    }
    d.y += std::sqrt(d.noise_var) * rng.normal(n, 1);
    return d;
}

Outcome em_monotone()
{
    Rng rng(1006);
    double worst_drop = 0.0;
    std::size_t iterations = 0;
    for (int t = 0; t < 100; ++t) {
        const DictionaryModel d = random_dictionary(rng);
        NuvConfig em;
        em.update_rule = UpdateRule::Em;
        const NuvState st = run_nuv(d, em);
        const auto& h = st.loglik_history;
        iterations += h.size() - 1;
        for (std::size_t i = 1; i < h.size(); ++i) {
            worst_drop = std::max(worst_drop, h[i - 1] - h[i]);
        }
    }
    return {worst_drop <= 1e-10, "100 instances, " + std::to_string(iterations) +
                                     " iterations, largest decrease " + fmt(worst_drop)};
}

Outcome stationarity()
{
    Rng rng(1007);
    int done = 0;
    int attempts = 0;
    bool ok = true;
    double worst_active = 0.0;
    double worst_inactive = -INFINITY;
    std::size_t actives = 0;
    std::size_t inactives = 0;
    while (done < 50 && attempts < 200) {
        ++attempts;
        const DictionaryModel d = random_dictionary(rng);
        NuvConfig cfg;
        cfg.rel_tol = 1e-12;
        cfg.max_iters = 2000;
        const NuvState st = run_nuv(d, cfg);
        if (!st.converged) {
            continue;
        }
        ++done;
        const auto rep = check_stationarity(d, st.variances, 1e-6);
        ok = ok && rep.all_satisfied;
        for (const auto& e : rep.entries) {
            if (e.variance > 0.0) {
                ++actives;
                worst_active = std::max(worst_active, std::abs(e.wt_residual));
            } else {
                ++inactives;
                worst_inactive = std::max(worst_inactive, e.condition / e.wk_quadratic);
            }
        }
    }
    return {ok && done == 50,
            std::to_string(done) + " converged of " + std::to_string(attempts) + "; " +
                std::to_string(actives) + " active (max residual " + fmt(worst_active) + "), " +
                std::to_string(inactives) + " inactive (max normalized excess " + fmt(worst_inactive) + ")"};
}

std::vector<Index> event_indices(const apps::FitResult& r)
{
    std::vector<Index> out;
    for (const auto& e : r.events) {
        out.push_back(e.index);
    }
    return out;
}

Outcome steps_analog()
{
    int good = 0;
    double worst_level = 0.0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        apps::SimulationSpec spec;
        spec.seed = seed;
        const auto sim = apps::simulate(spec);
        const auto r = apps::fit(apps::build_step_model(200, 0.25), sim.y);
        bool ok = r.events.size() == 1 && std::abs(r.events[0].index - sim.event_index[0]) <= 1 &&
                  r.segments.size() == 2;
        if (ok) {
            for (const auto& s : r.segments) {
                const double truth = sim.truth.segment(s.start, s.end - s.start + 1).mean();
                worst_level = std::max(worst_level, std::abs(s.params(0) - truth));
                ok = ok && std::abs(s.params(0) - truth) < 0.05;
            }
        }
        good += ok ? 1 : 0;
    }
    return {good == 20, std::to_string(good) + "/20 seeds with one jump within 1 sample; max level error " +
                            fmt(worst_level) + " (assumed noise variance 0.25)"};
}

Outcome walk_analog()
{
    int good = 0;
    std::size_t false_pos = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        apps::SimulationSpec spec;
        spec.kind = "walk";
        spec.magnitude = 3.0;
        spec.walk_sd = 0.1;
        spec.seed = seed;
        const auto sim = apps::simulate(spec);
        const auto r = apps::fit(apps::build_walk_model(200, 0.25, 0.25), sim.y);
        false_pos += r.events.size() > 0 ? r.events.size() - 1 : 0;
        good += r.events.size() == 1 && std::abs(r.events[0].index - sim.event_index[0]) <= 1 ? 1 : 0;
    }
    return {good == 20, std::to_string(good) + "/20 seeds exact, " + std::to_string(false_pos) +
                            " extra events (assumed noise and walk variance 0.25)"};
}

Outcome outlier_analog()
{
    int exact = 0;
    int cleaner = 0;
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    const auto model = apps::build_outlier_model(apps::build_oscillator_model(200, 0.25, 0.25), 0.25);
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        apps::SimulationSpec spec;
        spec.kind = "outliers";
        spec.events = 5;
        spec.noise_sd = 0.1;
        spec.magnitude = 20 * spec.noise_sd;
        spec.seed = seed;
        const auto sim = apps::simulate(spec);
        const auto r = apps::fit(model, sim.y);
        const auto found = event_indices(r);
        for (Index k : found) {
            const bool hit = std::binary_search(sim.event_index.begin(), sim.event_index.end(), k);
            tp += hit ? 1 : 0;
            fp += hit ? 0 : 1;
        }
        for (Index k : sim.event_index) {
            fn += std::binary_search(found.begin(), found.end(), k) ? 0 : 1;
        }
        exact += found == sim.event_index ? 1 : 0;
        const double clean = std::sqrt((r.smoothed - sim.truth).squaredNorm() / 200.0);
        const double raw = std::sqrt((sim.y - sim.truth).squaredNorm() / 200.0);
        cleaner += clean < raw ? 1 : 0;
    }
    const double precision = tp + fp == 0 ? 0.0 : double(tp) / double(tp + fp);
    const double recall = tp + fn == 0 ? 0.0 : double(tp) / double(tp + fn);
    return {precision == 1.0 && recall == 1.0 && cleaner == 20,
            "precision " + fmt(precision) + ", recall " + fmt(recall) + ", cleaned RMSE below raw in " +
                std::to_string(cleaner) + "/20 (assumed variances 0.25)"};
}

// ---------------------------------------------------------------------------

std::string slurp(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::vector<std::vector<std::string>> csv(const std::string& path)
{
    std::vector<std::vector<std::string>> out;
    std::istringstream in(slurp(path));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') {
            continue;
        }
        std::vector<std::string> f;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) {
            f.push_back(cell);
        }
        if (line.back() == ',') {
            f.emplace_back();
        }
        out.push_back(f);
    }
    return out;
}

Outcome cli_round_trip(const std::string& exe)
{
    if (exe.empty()) {
        return {false, "no CLI path given"};
    }
    const auto dir = std::filesystem::temp_directory_path() / ("nuvssm_accept_" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir);
    auto path = [&](const std::string& name) { return (dir / name).string(); };
    auto call = [&](const std::string& args) {
        return std::system(("\"" + exe + "\" " + args + " 2>/dev/null").c_str());
    };
    struct Case {
        std::string kind;
        std::string fit;
    };
    const Case cases[] = {
        {"steps", "fit-steps --sigma2 0.25"},
        {"walk", "fit-walk --sigma2 0.25 --walk-var 0.25"},
        {"outliers", "remove-outliers --sigma2 0.25 --process-var 0.25"},
    };
    int recovered = 0;
    int identical = 0;
    int total = 0;
    for (const auto& c : cases) {
        for (int seed = 1; seed <= 3; ++seed) {
            ++total;
            const std::string tag = c.kind + std::to_string(seed);
            const std::string sim = path(tag + ".csv");
            const std::string sim2 = path(tag + "_b.csv");
            const std::string out = path(tag + "_fit.csv");
            const std::string out2 = path(tag + "_fit_b.csv");
            const std::string simulate = "simulate --kind " + c.kind + " --seed " + std::to_string(seed);
            int rc = call(simulate + " --output " + sim);
            rc |= call(simulate + " --output " + sim2);
            rc |= call(c.fit + " --input " + sim + " --output " + out);
            rc |= call(c.fit + " --input " + sim + " --output " + out2);
            if (rc != 0) {
                continue;
            }
            identical += slurp(sim) == slurp(sim2) && slurp(out) == slurp(out2) ? 1 : 0;
            std::vector<std::string> truth;
            for (const auto& row : csv(sim)) {
                if (row.size() == 4 && row[3] == "1") {
                    truth.push_back(row[0]);
                }
            }
            std::vector<std::string> found;
            for (const auto& row : csv(out)) {
                if (row.size() == 6 && row[0] != "index" && !row[3].empty()) {
                    found.push_back(row[0]);
                }
            }
            bool ok = found.size() == truth.size();
            for (std::size_t i = 0; ok && i < found.size(); ++i) {
                const long d = std::stol(found[i]) - std::stol(truth[i]);
                ok = c.kind == "outliers" ? d == 0 : std::abs(d) <= 1;
            }
            recovered += ok ? 1 : 0;
        }
    }
    std::filesystem::remove_all(dir);
    return {recovered == total && identical == total,
            std::to_string(recovered) + "/" + std::to_string(total) + " round trips recovered, " +
                std::to_string(identical) + "/" + std::to_string(total) + " byte-identical reruns"};
}

}  // namespace

int main(int argc, char** argv)
{
    const std::string exe = argc > 1 ? argv[1] : "";
    struct Criterion {
        int id;
        const char* name;
        double budget;
        std::function<Outcome()> check;
    };
    const Criterion criteria[] = {
        {1, "smoother equivalence", 30, smoother_equivalence},
        {2, "single-edge duality identities", 5, duality_suite},
        {3, "no factorization above 1x1 for scalar I/O", 1, inversion_free},
        {4, "W~ recursion accuracy and linear cost", 30, wtilde_recursion},
        {5, "scalar NUV closed form", 1, scalar_closed_form},
        {6, "EM log-likelihood monotone", 60, em_monotone},
        {7, "stationarity of converged points", 60, stationarity},
        {8, "two-level step", 5, steps_analog},
        {9, "random walk with one jump", 30, walk_analog},
        {10, "outlier removal", 60, outlier_analog},
        {11, "CLI round trip and determinism", 30, [&] { return cli_round_trip(exe); }},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = c.check();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = seconds_since(t0);
        const bool pass = o.pass && secs < c.budget;
        failed += pass ? 0 : 1;
        std::printf("criterion %2d %-44s %s  %s [%.2fs, limit %.0fs]\n", c.id, c.name,
                    pass ? "PASS" : "FAIL", o.detail.c_str(), secs, c.budget);
        std::fflush(stdout);
    }
    std::printf("%d of 11 criteria passed\n", 11 - failed);
    return failed == 0 ? 0 : 1;
}
