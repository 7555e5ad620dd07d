#include "rbocpd/core.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace rbocpd {

Observation TimeStep::for_model(int model) const {
    auto it = x_by_model.find(model);
    if (it == x_by_model.end()) {
        throw UsageError("time step has no design matrix for model " + std::to_string(model));
    }
    return {y, it->second};
}

void TimeStep::validate() const {
    if (y.size() < 1) throw UsageError("observation must have d >= 1");
    if (!y.allFinite()) {
        std::ostringstream os;
        os << "non-finite observation at t=" << t;
        throw DataError(os.str());
    }
    for (const auto &[model, x] : x_by_model) {
        if (x.rows() != y.size()) {
            throw UsageError("design matrix for model " + std::to_string(model) + " does not have d rows");
        }
        if (!x.allFinite()) throw DataError("non-finite design matrix at t=" + std::to_string(t));
    }
}

void HazardSpec::validate() const {
    if (!(lambda > 1.0) || !std::isfinite(lambda)) {
        throw UsageError("hazard lambda must be finite and > 1");
    }
}

double hazard_log(const HazardSpec &spec, long from_r, long to_r) {
    const double h = spec.h();
    if (to_r == 0) return std::log(h);
    if (to_r == from_r + 1) return std::log1p(-h);
    return kNegInf;
}

double log_sum_exp(std::span<const double> values) {
    if (values.empty()) throw UsageError("log_sum_exp of an empty list");
    const double mx = *std::max_element(values.begin(), values.end());
    if (mx == kNegInf) return kNegInf;
    if (mx == std::numeric_limits<double>::infinity()) return mx;
    double sum = 0.0;
    for (double v : values) sum += std::exp(v - mx);
    return mx + std::log(sum);
}

double log_add_exp(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    if (a < b) std::swap(a, b);
    return a + std::log1p(std::exp(b - a));
}

void BetaState::validate() const {
    if (!(eps_min > 0.0)) throw UsageError("eps_min must be positive");
    if (beta_rlm < eps_min || beta_p < eps_min) throw UsageError("beta below eps_min");
    if (!(clip_rlm > 0.0) || !(clip_p > 0.0)) throw UsageError("clips must be positive");
    if (buffer_len == 0) throw UsageError("buffer_len must be positive");
}

} // namespace rbocpd
