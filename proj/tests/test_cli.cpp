#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "nuvssm/cli.hpp"

namespace fs = std::filesystem;
using namespace nuvssm;

namespace {

struct TempDir {
    fs::path path;
    TempDir() : path(fs::temp_directory_path() / ("nuvssm_cli_" + std::to_string(::getpid())))
    {
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
};

int run(std::vector<std::string> args)
{
    args.insert(args.begin(), "nuvssm");
    std::vector<char*> argv;
    for (auto& a : args) {
        argv.push_back(a.data());
    }
    return cli::run(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::vector<std::vector<std::string>> rows(const std::string& path)
{
    std::vector<std::vector<std::string>> out;
    std::istringstream in(slurp(path));
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> f;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) {
            f.push_back(cell);
        }
        if (!line.empty() && line.back() == ',') {
            f.emplace_back();
        }
        out.push_back(f);
    }
    return out;
}

std::vector<long> event_rows(const std::string& results)
{
    std::vector<long> idx;
    const auto r = rows(results);
    for (std::size_t i = 2; i < r.size(); ++i) {
        if (!r[i][3].empty()) {
            idx.push_back(std::stol(r[i][0]));
        }
    }
    return idx;
}

std::vector<long> truth_rows(const std::string& sim)
{
    std::vector<long> idx;
    const auto r = rows(sim);
    for (std::size_t i = 1; i < r.size(); ++i) {
        if (r[i][3] == "1") {
            idx.push_back(std::stol(r[i][0]));
        }
    }
    return idx;
}

}  // namespace

TEST_CASE("read_series")
{
    std::istringstream plain("1\n2.5\n\n# note\n-3e-1\n");
    const auto a = cli::read_series(plain, "", "plain");
    CHECK(a.values == std::vector<double>{1.0, 2.5, -0.3});

    std::istringstream headed("index,value\n0,4\n1,5\n");
    const auto b = cli::read_series(headed, "", "headed");
    CHECK(b.values == std::vector<double>{4.0, 5.0});
    CHECK(b.column == "value");

    std::istringstream by_name("t,a,b\n0,1,2\n1,3,4\n");
    CHECK(cli::read_series(by_name, "a", "n").values == std::vector<double>{1.0, 3.0});
    std::istringstream by_pos("0,1,2\n1,3,4\n");
    CHECK(cli::read_series(by_pos, "2", "p").values == std::vector<double>{2.0, 4.0});

    std::istringstream bad("value\n1\nx\n");
    try {
        (void)cli::read_series(bad, "", "bad.csv");
        FAIL("no error");
    } catch (const cli::InputError& e) {
        CHECK(std::string(e.what()).find("bad.csv:3") != std::string::npos);
    }
    std::istringstream ragged("1,2\n3\n");
    CHECK_THROWS_AS((void)cli::read_series(ragged, "", "r"), cli::InputError);
    std::istringstream empty("# nothing\n");
    CHECK_THROWS_AS((void)cli::read_series(empty, "", "e"), cli::InputError);
    std::istringstream missing("a,b\n1,2\n");
    CHECK_THROWS_AS((void)cli::read_series(missing, "c", "m"), cli::InputError);
    CHECK_THROWS_AS((void)cli::read_series_file("/nonexistent/x.csv", ""), cli::InputError);
}

TEST_CASE("format_number round-trips")
{
    for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 12345678.9}) {
        CHECK(std::stod(cli::format_number(v)) == v);
    }
    CHECK(cli::format_number(10.0) == "10");
}

TEST_CASE("fit-steps on the bundled fixture")
{
    TempDir dir;
    const std::string out = dir / "out.csv";
    const std::string svg = dir / "out.svg";
    const std::string trace = dir / "trace.csv";
    REQUIRE(run({"fit-steps", "--input", NUVSSM_FIXTURES "/steps.csv", "--sigma2", "0.25", "--output",
                 out, "--emit-plot", svg, "--trace", trace}) == 0);
    const auto r = rows(out);
    CHECK(r[0][0] == "# nuv-ssm results v1");
    CHECK(r[1] == std::vector<std::string>{"index", "y", "smoothed", "event_kind", "event_magnitude",
                                           "sigma2_k"});
    CHECK(r.size() == 202);
    CHECK(event_rows(out) == truth_rows(NUVSSM_FIXTURES "/steps.csv"));
    CHECK(slurp(svg).rfind("<svg", 0) == 0);
    CHECK(rows(trace)[0] == std::vector<std::string>{"iteration", "phase", "loglik", "active", "max_change"});
}

TEST_CASE("simulate then fit-walk finds both jumps")
{
    TempDir dir;
    const std::string sim = dir / "walk.csv";
    const std::string out = dir / "out.csv";
    REQUIRE(run({"simulate", "--kind", "walk", "--jumps", "2", "--seed", "7", "--output", sim}) == 0);
    REQUIRE(run({"fit-walk", "--input", sim, "--sigma2", "0.25", "--walk-var", "0.25", "--output", out}) == 0);
    const auto truth = truth_rows(sim);
    const auto found = event_rows(out);
    REQUIRE(truth.size() == 2);
    REQUIRE(found.size() == 2);
    CHECK(std::abs(found[0] - truth[0]) <= 1);
    CHECK(std::abs(found[1] - truth[1]) <= 1);
}

TEST_CASE("exit codes")
{
    TempDir dir;
    CHECK(run({"fit-steps", "--input", dir / "missing.csv", "--sigma2", "1"}) == 1);
    CHECK(run({"fit-steps", "--input", NUVSSM_FIXTURES "/steps.csv"}) == 1);
    CHECK(run({"fit-walk", "--input", NUVSSM_FIXTURES "/steps.csv", "--sigma2", "1"}) == 1);
    CHECK(run({"fit-steps", "--input", NUVSSM_FIXTURES "/steps.csv", "--sigma2", "-1"}) == 1);
    CHECK(run({"fit-steps", "--sigma2", "abc"}) == 1);
    CHECK(run({"nonsense"}) == 1);
    CHECK(run({"simulate", "--kind", "nope", "--output", dir / "x.csv"}) == 1);
    const std::string out = dir / "partial.csv";
    CHECK(run({"fit-steps", "--input", NUVSSM_FIXTURES "/steps.csv", "--sigma2", "0.25", "--max-iters",
               "3", "--output", out}) == 2);
    CHECK(rows(out).size() == 202);
}

TEST_CASE("config file with flag override")
{
    TempDir dir;
    const std::string cfg = dir / "fit.toml";
    std::ofstream(cfg) << "sigma2 = 0.01\nrule = \"em_then_ml\"\n";
    const std::string a = dir / "a.csv";
    const std::string b = dir / "b.csv";
    REQUIRE(run({"fit-steps", "--config", cfg, "--input", NUVSSM_FIXTURES "/steps.csv", "--sigma2", "0.25",
                 "--output", a}) == 0);
    REQUIRE(run({"fit-steps", "--input", NUVSSM_FIXTURES "/steps.csv", "--sigma2", "0.25", "--output", b}) == 0);
    CHECK(slurp(a) == slurp(b));
    const std::string c = dir / "c.csv";
    run({"fit-steps", "--config", cfg, "--input", NUVSSM_FIXTURES "/steps.csv", "--output", c});
    CHECK(event_rows(c).size() > 1);
}

TEST_CASE("batch-nuv and determinism")
{
    TempDir dir;
    const std::string s1 = dir / "s1.csv";
    const std::string s2 = dir / "s2.csv";
    REQUIRE(run({"simulate", "--kind", "steps", "--seed", "2", "--horizon", "100", "--output", s1}) == 0);
    REQUIRE(run({"simulate", "--kind", "steps", "--seed", "3", "--horizon", "100", "--output", s2}) == 0);
    const std::string sum1 = dir / "sum1.csv";
    const std::string sum2 = dir / "sum2.csv";
    const std::vector<std::string> args{"batch-nuv", "--inputs", s1, s2, "--sigma2-grid", "0.25,1",
                                        "--model", "steps"};
    auto with = [&](std::vector<std::string> extra) {
        auto a = args;
        a.insert(a.end(), extra.begin(), extra.end());
        return a;
    };
    REQUIRE(run(with({"--threads", "4", "--output", sum1, "--output-dir", dir / "fits"})) == 0);
    REQUIRE(run(with({"--threads", "1", "--output", sum2})) == 0);
    CHECK(slurp(sum1) == slurp(sum2));
    const auto r = rows(sum1);
    CHECK(r[0][0] == "# nuv-ssm batch v1");
    CHECK(r.size() == 6);
    for (std::size_t i = 2; i < r.size(); ++i) {
        CHECK(r[i][2] == "1");
        CHECK(r[i][3] == "1");
    }
    CHECK(std::distance(fs::directory_iterator(dir.path / "fits"), fs::directory_iterator{}) == 4);
}
