#ifndef RBOCPD_CORE_HPP
#define RBOCPD_CORE_HPP

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rbocpd {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Bad arguments or configuration.
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed or non-finite input data.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A numeric quantity left its mathematical domain.
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// One observation y (length d) together with the design matrix X (d x p)
/// for the model it is scored under.
struct Observation {
    Vector y;
    Matrix x;
};

/// One time step: the observation vector and each model's design matrix.
struct TimeStep {
    std::size_t t = 0;
    Vector y;
    std::map<int, Matrix> x_by_model;

    Observation for_model(int model) const;
    void validate() const;
};

enum class HazardKind { constant };

struct HazardSpec {
    HazardKind kind = HazardKind::constant;
    double lambda = 100.0;

    double h() const { return 1.0 / lambda; }
    void validate() const;
};

/// log H(to_r, from_r). Disallowed transitions give -inf.
double hazard_log(const HazardSpec &spec, long from_r, long to_r);

/// log sum exp over values, -inf if every value is -inf.
double log_sum_exp(std::span<const double> values);

inline double log_sum_exp(std::initializer_list<double> values) {
    return log_sum_exp(std::span<const double>(values.begin(), values.size()));
}

double log_add_exp(double a, double b);

/// The pair (beta_rlm, beta_p) and the online step machinery.
struct BetaState {
    double beta_rlm = 0.1;
    double beta_p = 0.05;
    double eps_min = 1e-10;
    std::function<double(std::size_t)> step_schedule = [](std::size_t t) {
        return 1.0 / static_cast<double>(t == 0 ? 1 : t);
    };
    double clip_rlm = 0.01;
    double clip_p = 0.1;
    std::vector<double> grad_buffer_rlm;
    std::vector<double> grad_buffer_p;
    std::size_t buffer_len = 50;
    std::size_t steps_taken = 0;

    void validate() const;
};

} // namespace rbocpd

#endif
