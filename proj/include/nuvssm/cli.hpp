#pragma once

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "nuvssm/apps.hpp"

namespace nuvssm::cli {

/// Bad input file, malformed row or invalid option combination (exit code 1).
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Series {
    std::vector<double> values;
    std::string column;  // name, or the 0-based position as text
};

/// One sample per row; '#' lines and blank lines are skipped. A first row
/// whose selected field is not numeric is a header. `column` is a header name
/// or a 0-based position; empty selects "value" when present, else the last
/// column.
Series read_series(std::istream& in, const std::string& column, const std::string& source);
Series read_series_file(const std::string& path, const std::string& column);

/// Shortest round-trip decimal representation.
std::string format_number(double v);

/// "# nuv-ssm results v1" then index,y,smoothed,event_kind,event_magnitude,sigma2_k.
void write_results(std::ostream& os, const apps::FitResult& fit);

/// Line chart of y and the smoothed output with event markers.
void write_svg(std::ostream& os, const apps::FitResult& fit, const std::string& title);

/// Entry point; returns the process exit code.
int run(int argc, char** argv);

}  // namespace nuvssm::cli
