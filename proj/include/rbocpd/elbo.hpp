#ifndef RBOCPD_ELBO_HPP
#define RBOCPD_ELBO_HPP

#include "rbocpd/blr.hpp"

#include <span>
#include <vector>

namespace rbocpd {

/**
 * Window of observations scored under one model together with the prior
 * and the parameter-posterior robustness beta_p.
 *
 * The variational family is the NIG family itself. Any other family can be
 * plugged in as long as the expected beta-loss, the expected power integral
 * and the KL to the prior are available in closed form.
 */
struct ElboContext {
    NigParams prior;
    std::vector<const Observation *> window;
    double beta_p = 0.05;

    static ElboContext over(const NigParams &prior, std::span<const Observation> obs, double beta_p);

    Eigen::Index d() const { return window.empty() ? 0 : window.front()->y.size(); }
    Eigen::Index p() const { return prior.p(); }
    std::size_t n() const { return window.size(); }
};

/// Gradient block with respect to (a, b, mu, vech L). vech is column-major
/// over the lower triangle including the diagonal.
struct ElboGradient {
    double a = 0.0;
    double b = 0.0;
    Vector mu;
    Vector vech_l;

    static ElboGradient zero(Eigen::Index p);
    ElboGradient &operator+=(const ElboGradient &o);
    ElboGradient &operator*=(double s);
    Vector flat() const;
    double max_abs() const;
};

Eigen::Index vech_size(Eigen::Index p);
Vector vech(const Matrix &lower);
Matrix unvech(const Vector &v, Eigen::Index p);

/// Flat parameter vector (a, b, mu, vech L) and back.
Vector pack(const NigParams &q);
NigParams unpack(const Vector &theta, Eigen::Index p);

inline constexpr double kFeasibleMargin = 1.0 + 1e-6;

/// KL(q || prior) between two NIG distributions.
double nig_kl(const NigParams &q, const NigParams &prior);

double elbo(const NigParams &var, const ElboContext &ctx);

/// elbo minus the data-independent constant n / beta_p.
double elbo_relative(const NigParams &var, const ElboContext &ctx);

ElboGradient elbo_gradient(const NigParams &var, const ElboContext &ctx);

/// Mean over `indices` of the per-observation gradients whose average over
/// the whole window is the full elbo gradient.
ElboGradient elbo_sample_gradient(const NigParams &var, const ElboContext &ctx, std::span<const std::size_t> indices);

/// Natural coordinate scales of a parameter point, used as a diagonal
/// preconditioner by the optimizers.
Vector natural_scales(const NigParams &q);

/// Clamp a and b into the feasible box.
void project_feasible(NigParams &q);

struct OptimizeResult {
    NigParams params;
    double elbo_relative = 0.0;
    double proj_grad_norm = 0.0;
    int iterations = 0;
    bool converged = false;
};

OptimizeResult full_optimize(const NigParams &init, const ElboContext &ctx, double tol = 1e-8, int max_iter = 500);

/// Conjugate posterior of the window, moved into the feasible box.
NigParams conjugate_start(const ElboContext &ctx);

} // namespace rbocpd

#endif
