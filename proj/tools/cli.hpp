#ifndef RBOCPD_TOOLS_CLI_HPP
#define RBOCPD_TOOLS_CLI_HPP

#include "rbocpd/presets.hpp"

#include <json.hpp>

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace rbocpd::cli {

using json = nlohmann::json;

enum ExitCode { ok = 0, usage = 1, data = 2, domain = 3, warning = 4 };

struct CsvTable {
    std::vector<std::string> header;
    std::vector<Vector> rows;
};

/// Headered numeric CSV. `columns` picks and orders the y columns; empty
/// takes them all. Throws DataError with the line number on a bad row.
CsvTable read_csv(std::istream &in, const std::vector<std::string> &columns = {});
CsvTable read_csv_file(const std::string &path, const std::vector<std::string> &columns = {});

struct RunConfig {
    std::string input;
    std::vector<std::string> columns;
    /// used when no input is given
    std::optional<SimulationSpec> simulation;
    DetectorConfig detector;
    BetaState beta;
    LossSpec loss;
    bool tune = false;
    /// "fixed" keeps the configured beta_p, "auto" runs the influence init
    std::string beta_init = "fixed";
    std::string out_dir = "out";
};

/// Preset (if any), then config file, then `key.path=value` overrides.
json build_config_json(const std::string &preset, const std::string &config_path,
                       const std::vector<std::string> &overrides);
RunConfig run_config_from_json(const json &j);
json preset_to_json(const Preset &p);
SimulationSpec simulation_from_json(const json &j);

/// Writes the run outputs into cfg.out_dir.
int cmd_run(const RunConfig &cfg, std::ostream &log);

int main(int argc, char **argv, std::ostream &out, std::ostream &err);

} // namespace rbocpd::cli

#endif
