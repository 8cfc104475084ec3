// Experiment runner: channel loading, sweep configuration, CSV/JSON rows.
#pragma once

#include "pimac/power_min.hpp"
#include "pimac/rate_region.hpp"
#include "pimac/sweep.hpp"

#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace pimac {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ChannelParseError : public std::runtime_error {
public:
    ChannelParseError(int line, int column, const std::string& what);
    int line() const { return line_; }
    int column() const { return column_; }

private:
    int line_;
    int column_;
};

// Builtins: "H1", "H2", "H1+Hprime(J)" for 3 <= J <= 7. Anything else is
// read as a channel file:
//   J=<n> sigma2=<v> caps=<v,...>
//   <i> <j> <magnitude> <phase>      (1-based, one line per entry)
// Blank lines and text after '#' are ignored.
ChannelInstance load_channel(const std::string& name);
ChannelInstance parse_channel(std::istream& in);
bool is_builtin_channel(const std::string& name);

// lo:hi:step (inclusive) or a single value.
std::vector<double> parse_grid(const std::string& text);
RateProfile parse_alpha(const std::string& text);

struct ExperimentConfig {
    std::string experiment;
    std::string channel = "H1";
    std::string mode = "both";  // proper | improper | both
    Decoding decoding = Decoding::Successive;
    std::string algorithm = "both";  // improper SINR heuristics: separate | joint | both
    SinrSemantics improper_sinr = SinrSemantics::PerStream;
    int order = 1;
    int extension = 1;
    std::vector<double> grid;
    std::vector<RateProfile> alphas;
    std::vector<int> users;  // multiuser network sizes J
    std::optional<double> power_cap;  // overrides the channel caps
    SolverConfig solver;
    Exec exec = Exec::Parallel;
    std::string out;  // CSV path; JSON goes next to it. Empty: stdout.

    void validate() const;
};

// Grids and flags used when the command line leaves them out.
ExperimentConfig default_config(const std::string& experiment);
// Keys mirror the CLI flags; present keys replace the fields of base.
ExperimentConfig apply_json(ExperimentConfig base, const nlohmann::json& j);

struct CurvePoint {
    std::string experiment;
    std::string channel;
    std::string mode;
    std::string demand;
    std::optional<std::array<double, 3>> rates;
    std::optional<double> p_total;
    std::vector<double> p_per_user;
    std::string status;
    int iterations = 0;
    std::optional<double> audit_slack;  // bits; >= 0 means the reported point is achieved
    std::uint64_t seed = 0;
    std::optional<double> ratio;  // improper/proper power, or a saving ratio
};

struct GoldenCheck {
    std::string what;
    double target = 0.0;
    std::optional<double> got;
    double rel_tol = 0.1;
    bool pass() const;
};

struct ExperimentResult {
    std::vector<CurvePoint> rows;
    std::vector<GoldenCheck> checks;
};

ExperimentResult run_experiment(const ExperimentConfig& cfg);

extern const char* const kCsvHeader;
std::string to_csv(const std::vector<CurvePoint>& rows);
nlohmann::json to_json(const ExperimentConfig& cfg, const ExperimentResult& res);
std::string summary(const ExperimentResult& res);
// Writes CSV (and JSON beside it) to cfg.out, or CSV to stdout.
void write_outputs(const ExperimentConfig& cfg, const ExperimentResult& res);

}  // namespace pimac
