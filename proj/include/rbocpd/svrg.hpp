#ifndef RBOCPD_SVRG_HPP
#define RBOCPD_SVRG_HPP

#include "rbocpd/elbo.hpp"

#include <cstdint>
#include <random>

namespace rbocpd {

using Rng = std::mt19937_64;

/// Inverse Fisher information of the NIG family at a point: exact for the
/// (a, b) and mu blocks, diagonal for the Cholesky entries.
struct FisherPreconditioner {
    Eigen::Matrix2d shape_scale;
    Matrix mean;
    Vector chol;

    static FisherPreconditioner at(const NigParams &q);
    Vector apply(const Vector &grad_flat) const;
    bool empty() const { return chol.size() == 0; }
};

struct SvrgHyper {
    int W = 360;
    int B_star = 25;
    int b_star = 10;
    int m = 20;
    int K = 1;
    double eta = 1e-3;
    bool decay = false;
    bool variance_reduction = true;
    double opt_tol = 1e-8;
    int opt_max_iter = 500;

    void validate() const;
};

/**
 * Per-hypothesis optimizer state. The observation window itself is shared
 * between hypotheses and handed in as an ElboContext whose window is
 * ordered newest first.
 */
struct SvrgState {
    NigParams theta;
    NigParams theta_anchor;
    ElboGradient g_anchor;
    FisherPreconditioner precond;
    long tau = 0;
    std::uint64_t inner_steps = 0;
    std::uint64_t full_opts = 0;
    Rng rng;

    static SvrgState fresh(const NigParams &prior, std::uint64_t seed, int model, std::uint64_t birth);
    std::size_t bytes() const;
};

/// Number of trials up to and including the first success.
long sample_geometric(double p_success, Rng &rng);

/// k distinct indices from {0, ..., n-1}, ascending.
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng &rng);

/// One outer iteration for a hypothesis of run length r after the newest
/// observation has been appended to `window` (newest first, at most W long).
void svrg_observe(SvrgState &state, const SvrgHyper &hyper, long r, const ElboContext &window);

} // namespace rbocpd

#endif
