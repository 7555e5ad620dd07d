#ifndef RBOCPD_PRESETS_HPP
#define RBOCPD_PRESETS_HPP

#include "rbocpd/beta_control.hpp"
#include "rbocpd/simulate.hpp"

#include <string>
#include <vector>

namespace rbocpd {

/// A synthetic stream generator together with detector settings that suit it.
struct Preset {
    std::string name;
    SimulationSpec simulation;
    DetectorConfig detector;
    BetaState beta;
    LossSpec loss;
    bool tune = false;
};

std::vector<std::string> preset_names();

/// Throws UsageError for an unknown name.
Preset make_preset(const std::string &name, std::uint64_t seed = 0);

/// The same detector with both betas pushed to 1e-8, i.e. standard Bayes.
DetectorConfig kld_limit(DetectorConfig cfg);

} // namespace rbocpd

#endif
