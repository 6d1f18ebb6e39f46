#include "nuvssm/cli.hpp"

#include <atomic>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

namespace nuvssm::cli {
namespace {

std::vector<std::string> split(const std::string& line, char sep)
{
    std::vector<std::string> out;
    std::string field;
    std::istringstream is(line);
    while (std::getline(is, field, sep)) {
        out.push_back(field);
    }
    if (!line.empty() && line.back() == sep) {
        out.emplace_back();
    }
    return out;
}

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) {
        return "";
    }
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::optional<double> parse_double(const std::string& text)
{
    const std::string t = trim(text);
    if (t.empty()) {
        return std::nullopt;
    }
    const char* first = t.data();
    if (*first == '+') {
        ++first;
    }
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(first, t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size()) {
        return std::nullopt;
    }
    return v;
}

}  // namespace

Series read_series(std::istream& in, const std::string& column, const std::string& source)
{
    Series s;
    std::string line;
    std::size_t line_no = 0;
    std::optional<std::size_t> index;
    std::size_t width = 0;
    bool first_row = true;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) {
            line.erase(0, 3);
        }
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') {
            continue;
        }
        std::vector<std::string> fields = split(t, ',');
        for (auto& f : fields) {
            f = trim(f);
        }
        auto where = [&] { return source + ":" + std::to_string(line_no) + ": "; };
        if (first_row) {
            first_row = false;
            width = fields.size();
            bool header = false;
            for (const auto& f : fields) {
                header = header || !parse_double(f);
            }
            if (header) {
                if (column.empty()) {
                    index = fields.size() - 1;
                    for (std::size_t i = 0; i < fields.size(); ++i) {
                        if (fields[i] == "value") {
                            index = i;
                        }
                    }
                } else {
                    for (std::size_t i = 0; i < fields.size(); ++i) {
                        if (fields[i] == column) {
                            index = i;
                        }
                    }
                    if (!index) {
                        if (auto v = parse_double(column); v && *v >= 0 && *v == std::floor(*v) &&
                                                           *v < static_cast<double>(fields.size())) {
                            index = static_cast<std::size_t>(*v);
                        } else {
                            throw InputError(where() + "no column '" + column + "' in header");
                        }
                    }
                }
                s.column = fields[*index];
                continue;
            }
        }
        if (!index) {
            if (column.empty()) {
                index = fields.size() - 1;
            } else {
                const auto v = parse_double(column);
                if (!v || *v < 0 || *v != std::floor(*v) || *v >= static_cast<double>(fields.size())) {
                    throw InputError(where() + "column '" + column +
                                     "' is not a valid position and the file has no header");
                }
                index = static_cast<std::size_t>(*v);
            }
            s.column = std::to_string(*index);
        }
        if (fields.size() != width) {
            throw InputError(where() + "expected " + std::to_string(width) + " fields, found " +
                             std::to_string(fields.size()));
        }
        const auto v = parse_double(fields[*index]);
        if (!v || !std::isfinite(*v)) {
            throw InputError(where() + "malformed value '" + fields[*index] + "'");
        }
        s.values.push_back(*v);
    }
    if (s.values.empty()) {
        throw InputError(source + ": no samples");
    }
    return s;
}

Series read_series_file(const std::string& path, const std::string& column)
{
    std::ifstream in(path);
    if (!in) {
        throw InputError("cannot open input file '" + path + "'");
    }
    return read_series(in, column, path);
}

std::string format_number(double v)
{
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, ptr);
}

void write_results(std::ostream& os, const apps::FitResult& fit)
{
    os << "# nuv-ssm results v1\n";
    os << "index,y,smoothed,event_kind,event_magnitude,sigma2_k\n";
    std::size_t e = 0;
    for (Index k = 0; k < fit.smoothed.size(); ++k) {
        std::string kinds;
        std::string mags;
        while (e < fit.events.size() && fit.events[e].index == k) {
            if (!kinds.empty()) {
                kinds += ';';
                mags += ';';
            }
            kinds += apps::to_string(fit.events[e].kind);
            mags += format_number(fit.events[e].magnitude);
            ++e;
        }
        os << k << ',' << format_number(fit.observed(k)) << ',' << format_number(fit.smoothed(k))
           << ',' << kinds << ',' << mags << ',' << format_number(fit.step_variance(k)) << '\n';
    }
}

void write_svg(std::ostream& os, const apps::FitResult& fit, const std::string& title)
{
    const double w = 900;
    const double h = 360;
    const double pad = 40;
    const Index n = fit.observed.size();
    double lo = std::min(fit.observed.minCoeff(), fit.smoothed.minCoeff());
    double hi = std::max(fit.observed.maxCoeff(), fit.smoothed.maxCoeff());
    if (hi - lo < 1e-12) {
        lo -= 1;
        hi += 1;
    }
    auto px = [&](Index k) { return pad + (w - 2 * pad) * (n > 1 ? double(k) / double(n - 1) : 0.5); };
    auto py = [&](double v) { return h - pad - (h - 2 * pad) * (v - lo) / (hi - lo); };
    auto pt = [&](Index k, double v) {
        char b[64];
        std::snprintf(b, sizeof b, "%.2f,%.2f ", px(k), py(v));
        return std::string(b);
    };
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
       << "\" viewBox=\"0 0 " << w << ' ' << h << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << pad << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" << title
       << "</text>\n";
    os << "<rect x=\"" << pad << "\" y=\"" << pad << "\" width=\"" << w - 2 * pad << "\" height=\""
       << h - 2 * pad << "\" fill=\"none\" stroke=\"#999\"/>\n";
    os << "<polyline fill=\"none\" stroke=\"#9ab\" stroke-width=\"1\" points=\"";
    for (Index k = 0; k < n; ++k) {
        os << pt(k, fit.observed(k));
    }
    os << "\"/>\n<polyline fill=\"none\" stroke=\"#c33\" stroke-width=\"2\" points=\"";
    for (Index k = 0; k < n; ++k) {
        os << pt(k, fit.smoothed(k));
    }
    os << "\"/>\n";
    for (const auto& e : fit.events) {
        char b[160];
        std::snprintf(b, sizeof b,
                      "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"4\" fill=\"none\" stroke=\"#060\"><title>%s %lld</title></circle>\n",
                      px(e.index), py(fit.observed(e.index)), apps::to_string(e.kind).c_str(),
                      static_cast<long long>(e.index));
        os << b;
    }
    char b[200];
    std::snprintf(b, sizeof b,
                  "<text x=\"%.0f\" y=\"%.0f\" font-family=\"sans-serif\" font-size=\"11\">%s .. %s</text>\n",
                  pad, h - 12, format_number(lo).c_str(), format_number(hi).c_str());
    os << b << "</svg>\n";
}

// ---------------------------------------------------------------------------

namespace {

struct Options {
    std::string input;
    std::vector<std::string> inputs;
    std::string column;
    std::string output = "-";
    std::string plot;
    std::string trace;
    std::string output_dir;

    std::optional<double> sigma2;
    std::vector<double> sigma2_grid;
    std::optional<double> walk_var;
    bool continuity = false;
    int degree = 1;
    std::string base = "oscillator";
    std::string model = "steps";
    std::optional<double> process_var;
    double radius = 0.98;
    double period = 25.0;

    std::string rule = "em_then_ml";
    int max_iters = 500;
    double rel_tol = 1e-6;
    std::optional<double> variance_floor;
    double init_variance = 1.0;
    int warmup_iters = 100;
    std::string smoother = "mbf";
    unsigned threads = 0;

    std::string kind = "steps";
    Index horizon = 200;
    std::optional<int> events;
    std::uint64_t seed = 1;
    double noise_sd = 0.1;
    std::optional<double> magnitude;
    double walk_sd = 0.1;
};

NuvConfig nuv_config(const Options& o)
{
    NuvConfig c;
    c.update_rule = parse_update_rule(o.rule);
    c.max_iters = o.max_iters;
    c.rel_tol = o.rel_tol;
    c.variance_floor = o.variance_floor;
    c.init_variance = o.init_variance;
    c.warmup_iters = o.warmup_iters;
    if (o.smoother == "mbf") {
        c.smoother = SmootherKind::Mbf;
    } else if (o.smoother == "bifm") {
        c.smoother = SmootherKind::Bifm;
    } else {
        throw InputError("unknown smoother '" + o.smoother + "' (mbf, bifm)");
    }
    c.validate();
    return c;
}

double need(const std::optional<double>& v, const char* flag)
{
    if (!v) {
        throw InputError(std::string(flag) + " is required");
    }
    return *v;
}

apps::AppModel build(const std::string& model, Index horizon, const Options& o, double sigma2)
{
    if (model == "steps") {
        return apps::build_step_model(horizon, sigma2);
    }
    if (model == "walk") {
        return apps::build_walk_model(horizon, sigma2, need(o.walk_var, "--walk-var"));
    }
    if (model == "lines") {
        return apps::build_polynomial_model(horizon, sigma2, o.degree, o.continuity);
    }
    if (model == "outliers") {
        apps::AppModel base;
        if (o.base == "oscillator") {
            base = apps::build_oscillator_model(horizon, sigma2, need(o.process_var, "--process-var"),
                                                o.radius, o.period);
        } else if (o.base == "steps" || o.base == "walk" || o.base == "lines") {
            base = build(o.base, horizon, o, sigma2);
        } else {
            throw InputError("unknown --base '" + o.base + "'");
        }
        return apps::build_outlier_model(base, sigma2);
    }
    throw InputError("unknown model '" + model + "' (steps, walk, lines, outliers)");
}

void write_to(const std::string& path, const std::function<void(std::ostream&)>& body)
{
    if (path == "-") {
        body(std::cout);
        std::cout.flush();
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw InputError("cannot write '" + path + "'");
    }
    body(out);
    if (!out) {
        throw InputError("error writing '" + path + "'");
    }
}

int cmd_fit(const std::string& model, const Options& o)
{
    if (o.input.empty()) {
        throw InputError("--input is required");
    }
    const NuvConfig config = nuv_config(o);
    const Series s = read_series_file(o.input, o.column);
    const Matrix y = as_observations(s.values);
    const apps::AppModel m = build(model, y.rows(), o, need(o.sigma2, "--sigma2"));
    std::vector<IterationRecord> trace;
    const apps::FitResult fit = apps::fit(m, y, config, &trace);
    write_to(o.output, [&](std::ostream& os) { write_results(os, fit); });
    if (!o.plot.empty()) {
        write_to(o.plot, [&](std::ostream& os) { write_svg(os, fit, model + ": " + o.input); });
    }
    if (!o.trace.empty()) {
        write_to(o.trace, [&](std::ostream& os) { write_trace_csv(os, trace); });
    }
    if (!fit.state.converged) {
        std::cerr << "warning: NUV iteration did not converge within " << o.max_iters
                  << " iterations\n";
        return 2;
    }
    return 0;
}

int cmd_simulate(const Options& o)
{
    apps::SimulationSpec spec;
    spec.kind = o.kind;
    spec.horizon = o.horizon;
    spec.seed = o.seed;
    spec.noise_sd = o.noise_sd;
    spec.walk_sd = o.walk_sd;
    spec.events = o.events.value_or(o.kind == "outliers" ? 5 : 1);
    const std::map<std::string, double> default_magnitude{
        {"steps", 10.0}, {"walk", 3.0}, {"lines", 0.5}, {"outliers", 20.0 * o.noise_sd}};
    const auto it = default_magnitude.find(o.kind);
    if (it == default_magnitude.end()) {
        throw InputError("unknown --kind '" + o.kind + "' (steps, walk, lines, outliers)");
    }
    spec.magnitude = o.magnitude.value_or(it->second);
    apps::Simulation sim;
    try {
        sim = apps::simulate(spec);
    } catch (const std::invalid_argument& e) {
        throw InputError(e.what());
    }
    write_to(o.output, [&](std::ostream& os) {
        os << "index,value,truth,event\n";
        std::size_t e = 0;
        for (Index k = 0; k < sim.y.size(); ++k) {
            const bool ev = e < sim.event_index.size() && sim.event_index[e] == k;
            e += ev ? 1 : 0;
            os << k << ',' << format_number(sim.y(k)) << ',' << format_number(sim.truth(k)) << ','
               << (ev ? 1 : 0) << '\n';
        }
    });
    return 0;
}

int cmd_batch(const Options& o)
{
    std::vector<std::string> files = o.inputs;
    if (!o.input.empty()) {
        files.insert(files.begin(), o.input);
    }
    if (files.empty()) {
        throw InputError("batch-nuv needs --input or --inputs");
    }
    std::vector<double> grid = o.sigma2_grid;
    if (grid.empty()) {
        grid.push_back(need(o.sigma2, "--sigma2 or --sigma2-grid"));
    }
    const NuvConfig config = nuv_config(o);
    std::vector<Series> data;
    for (const auto& f : files) {
        data.push_back(read_series_file(f, o.column));
    }
    struct Job {
        std::size_t file;
        double sigma2;
        std::optional<apps::FitResult> fit;
        std::string error;
    };
    std::vector<Job> jobs;
    for (std::size_t f = 0; f < files.size(); ++f) {
        for (double s2 : grid) {
            jobs.push_back({f, s2, std::nullopt, ""});
        }
    }
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t j = next++; j < jobs.size(); j = next++) {
            Job& job = jobs[j];
            try {
                const Matrix y = as_observations(data[job.file].values);
                job.fit = apps::fit(build(o.model, y.rows(), o, job.sigma2), y, config);
            } catch (const std::exception& e) {
                job.error = e.what();
            }
        }
    };
    unsigned n_threads = o.threads > 0 ? o.threads : std::max(1u, std::thread::hardware_concurrency());
    n_threads = std::min<unsigned>(n_threads, static_cast<unsigned>(jobs.size()));
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < n_threads; ++t) {
        pool.emplace_back(worker);
    }
    for (auto& t : pool) {
        t.join();
    }
    for (const auto& job : jobs) {
        if (!job.error.empty()) {
            throw InputError(files[job.file] + ": " + job.error);
        }
    }
    if (!o.output_dir.empty()) {
        std::filesystem::create_directories(o.output_dir);
        for (std::size_t j = 0; j < jobs.size(); ++j) {
            const std::string stem = std::filesystem::path(files[jobs[j].file]).stem().string();
            const std::string path =
                (std::filesystem::path(o.output_dir) / (stem + "_" + std::to_string(j) + ".csv")).string();
            write_to(path, [&](std::ostream& os) { write_results(os, *jobs[j].fit); });
        }
    }
    bool all_converged = true;
    write_to(o.output, [&](std::ostream& os) {
        os << "# nuv-ssm batch v1\n";
        os << "input,sigma2,events,converged,loglik,iterations\n";
        for (const auto& job : jobs) {
            const auto& st = job.fit->state;
            all_converged = all_converged && st.converged;
            os << files[job.file] << ',' << format_number(job.sigma2) << ',' << job.fit->events.size()
               << ',' << (st.converged ? 1 : 0) << ',' << format_number(st.loglik_history.back())
               << ',' << st.iteration << '\n';
        }
    });
    return all_converged ? 0 : 2;
}

int cmd_oracle(const Options& o)
{
    if (o.input.empty()) {
        throw InputError("--input is required");
    }
    const NuvConfig config = nuv_config(o);
    const Series s = read_series_file(o.input, o.column);
    const Matrix y = as_observations(s.values);
    const apps::AppModel m = build(o.model, y.rows(), o, need(o.sigma2, "--sigma2"));
    if (m.ssm.state_dim() * m.ssm.horizon > 2000) {
        throw InputError("oracle-check: state dimension times length exceeds 2000");
    }
    const NuvRun run = run_nuv(m.ssm, y, config);
    const NuvOverrides ov = overrides_from_variances(m.ssm, run.state.variances);
    const SmoothingResult d = dense_joint_solve(m.ssm, y, &ov);
    double worst = 0.0;
    for (auto kind : {SmootherKind::Mbf, SmootherKind::Bifm}) {
        const SmoothingResult r = smooth(kind, m.ssm, y, &ov);
        double dm = 0.0;
        double dv = 0.0;
        for (std::size_t k = 0; k < r.state.size(); ++k) {
            dm = std::max(dm, (r.state[k].mean - d.state[k].mean).cwiseAbs().maxCoeff());
            dv = std::max(dv, (r.state[k].cov - d.state[k].cov).cwiseAbs().maxCoeff());
        }
        const double dl = std::abs(r.log_likelihood - d.log_likelihood);
        std::cout << (kind == SmootherKind::Mbf ? "mbf" : "bifm") << " mean " << format_number(dm)
                  << " cov " << format_number(dv) << " loglik " << format_number(dl) << '\n';
        worst = std::max({worst, dm, dv, dl});
    }
    std::cout << "max deviation: " << format_number(worst) << '\n';
    return 0;
}

}  // namespace

int run(int argc, char** argv)
{
    CLI::App app{"Sparse input and outlier estimation in linear state space models"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Read options from an INI/TOML file (flags take precedence)");
    Options o;

    app.add_option("--input", o.input, "Input CSV");
    app.add_option("--inputs", o.inputs, "Several input CSVs (batch-nuv)");
    app.add_option("--column", o.column, "Column name or 0-based position");
    app.add_option("--output", o.output, "Results CSV ('-' for stdout)");
    app.add_option("--emit-plot", o.plot, "Write an SVG chart");
    app.add_option("--trace", o.trace, "Write the iteration log as CSV");
    app.add_option("--output-dir", o.output_dir, "Per-fit results (batch-nuv)");

    app.add_option("--sigma2", o.sigma2, "Assumed observation noise variance");
    app.add_option("--sigma2-grid", o.sigma2_grid, "Observation noise variances to sweep (batch-nuv)")
        ->delimiter(',');
    app.add_option("--walk-var", o.walk_var, "Random walk increment variance");
    app.add_flag("--continuity", o.continuity, "No level jumps in the line model");
    app.add_option("--degree", o.degree, "Polynomial segment degree (1 or 2)");
    app.add_option("--base", o.base, "Signal model for remove-outliers: oscillator, steps, walk, lines");
    app.add_option("--model", o.model, "Model for batch-nuv and oracle-check: steps, walk, lines, outliers");
    app.add_option("--process-var", o.process_var, "Oscillator process noise variance");
    app.add_option("--radius", o.radius, "Oscillator pole radius");
    app.add_option("--period", o.period, "Oscillator period in samples");

    app.add_option("--rule", o.rule, "Variance update: em, mackay, em_then_ml");
    app.add_option("--max-iters", o.max_iters, "Iteration limit");
    app.add_option("--rel-tol", o.rel_tol, "Convergence threshold on the relative variance change");
    app.add_option("--variance-floor", o.variance_floor, "Variances below this become zero");
    app.add_option("--init-variance", o.init_variance, "Starting NUV variance");
    app.add_option("--warmup-iters", o.warmup_iters, "EM iterations before the ML phase");
    app.add_option("--smoother", o.smoother, "mbf or bifm");
    app.add_option("--threads", o.threads, "Worker threads for batch-nuv (0: all cores)");

    app.add_option("--kind", o.kind, "Simulated signal: steps, walk, lines, outliers");
    app.add_option("--horizon", o.horizon, "Simulated length");
    app.add_option("--events,--jumps", o.events, "Number of injected events");
    app.add_option("--seed", o.seed, "Random seed");
    app.add_option("--noise-sd", o.noise_sd, "Observation noise standard deviation");
    app.add_option("--magnitude", o.magnitude, "Event size");
    app.add_option("--walk-sd", o.walk_sd, "Random walk / process noise standard deviation");

    std::string which;
    for (const char* name : {"fit-steps", "fit-walk", "fit-lines", "remove-outliers", "batch-nuv",
                             "simulate", "oracle-check"}) {
        app.add_subcommand(name)->fallthrough()->callback([&which, name] { which = name; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (which == "fit-steps") {
            return cmd_fit("steps", o);
        }
        if (which == "fit-walk") {
            return cmd_fit("walk", o);
        }
        if (which == "fit-lines") {
            return cmd_fit("lines", o);
        }
        if (which == "remove-outliers") {
            return cmd_fit("outliers", o);
        }
        if (which == "batch-nuv") {
            return cmd_batch(o);
        }
        if (which == "simulate") {
            return cmd_simulate(o);
        }
        if (which == "oracle-check") {
            return cmd_oracle(o);
        }
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}

}  // namespace nuvssm::cli
