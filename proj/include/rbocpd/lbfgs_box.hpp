#ifndef RBOCPD_LBFGS_BOX_HPP
#define RBOCPD_LBFGS_BOX_HPP

#include "rbocpd/core.hpp"

#include <functional>

namespace rbocpd {

/// Objective returning f(x) and writing its gradient.
using Objective = std::function<double(const Vector &x, Vector &grad)>;

struct BoxMinimizeResult {
    Vector x;
    double f = 0.0;
    double proj_grad_norm = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// Projected limited-memory BFGS for min f(x) subject to x >= lower.
/// Unbounded coordinates carry lower = -inf.
BoxMinimizeResult minimize_box(const Objective &f, const Vector &x0, const Vector &lower, double tol, int max_iter,
                               int memory = 10);

} // namespace rbocpd

#endif
