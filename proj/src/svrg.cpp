#include "rbocpd/svrg.hpp"

#include <boost/math/special_functions/trigamma.hpp>

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace rbocpd {

void SvrgHyper::validate() const {
    if (!(W > B_star && B_star > b_star && b_star >= 1)) throw UsageError("svrg sizes must satisfy W > B* > b* >= 1");
    if (m < 1 || K < 1) throw UsageError("svrg m and K must be positive");
    if (!(eta > 0.0)) throw UsageError("svrg step size must be positive");
}

SvrgState SvrgState::fresh(const NigParams &prior, std::uint64_t seed, int model, std::uint64_t birth) {
    SvrgState s;
    s.theta = prior;
    s.theta_anchor = prior;
    s.g_anchor = ElboGradient::zero(prior.p());
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(model), static_cast<std::uint32_t>(birth),
                      static_cast<std::uint32_t>(birth >> 32)};
    s.rng.seed(seq);
    return s;
}

std::size_t SvrgState::bytes() const {
    auto nig = [](const NigParams &q) {
        return sizeof(NigParams) + sizeof(double) * static_cast<std::size_t>(q.mu.size() + q.prec_chol.size());
    };
    return sizeof(SvrgState) + nig(theta) + nig(theta_anchor) +
           sizeof(double) * static_cast<std::size_t>(g_anchor.mu.size() + g_anchor.vech_l.size() + precond.mean.size() + precond.chol.size() + 4);
}

FisherPreconditioner FisherPreconditioner::at(const NigParams &q) {
    FisherPreconditioner out;
    const double tri = boost::math::trigamma(q.a);
    const double det = q.a * tri - 1.0;
    out.shape_scale << q.a, q.b, q.b, q.b * q.b * tri;
    out.shape_scale /= det;
    const Matrix cov = q.covariance();
    out.mean = (q.b / q.a) * cov;
    const Eigen::Index p = q.p();
    out.chol.resize(vech_size(p));
    Eigen::Index k = 0;
    for (Eigen::Index j = 0; j < p; ++j)
        for (Eigen::Index i = j; i < p; ++i) out.chol(k++) = 1.0 / (cov(i, i) * (i == j ? 2.0 : 1.0));
    return out;
}

Vector FisherPreconditioner::apply(const Vector &g) const {
    const Eigen::Index p = mean.rows();
    Vector out(g.size());
    out.head<2>() = shape_scale * g.head<2>();
    out.segment(2, p) = mean * g.segment(2, p);
    out.tail(chol.size()) = chol.cwiseProduct(g.tail(chol.size()));
    return out;
}

long sample_geometric(double p_success, Rng &rng) {
    if (!(p_success > 0.0) || p_success > 1.0) throw UsageError("geometric success probability must be in (0, 1]");
    if (p_success == 1.0) return 1;
    std::geometric_distribution<long> geo(p_success);
    return geo(rng) + 1;
}

std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng &rng) {
    k = std::min(k, n);
    std::vector<std::size_t> out;
    out.reserve(k);
    if (k == n) {
        for (std::size_t i = 0; i < n; ++i) out.push_back(i);
        return out;
    }
    // Floyd's algorithm
    std::unordered_set<std::size_t> seen;
    for (std::size_t j = n - k; j < n; ++j) {
        std::uniform_int_distribution<std::size_t> u(0, j);
        std::size_t t = u(rng);
        if (!seen.insert(t).second) {
            seen.insert(j);
            t = j;
        }
        out.push_back(t);
    }
    std::sort(out.begin(), out.end());
    return out;
}

namespace {

ElboGradient mean_gradient(const NigParams &theta, const ElboContext &ctx, const std::vector<std::size_t> &idx) {
    return elbo_sample_gradient(theta, ctx, idx);
}

bool usable(const NigParams &q) {
    return q.mu.allFinite() && q.prec_chol.allFinite() && std::isfinite(q.a) && std::isfinite(q.b) &&
           (q.prec_chol.diagonal().array().abs() > 1e-12).all();
}

} // namespace

void svrg_observe(SvrgState &state, const SvrgHyper &hyper, long r, const ElboContext &window) {
    const std::size_t n = window.n();
    if (n == 0) return;
    const Eigen::Index p = state.theta.p();
    const bool young = static_cast<long>(r) + 1 <= hyper.W;

    if (state.tau == 0) {
        if (young) {
            OptimizeResult opt = full_optimize(conjugate_start(window), window, hyper.opt_tol, hyper.opt_max_iter);
            state.theta = opt.params;
            state.theta_anchor = opt.params;
            state.tau = hyper.m;
            ++state.full_opts;
        } else {
            state.theta_anchor = state.theta;
            state.tau = sample_geometric(static_cast<double>(hyper.B_star) / (hyper.B_star + hyper.b_star), state.rng);
        }
    }
    // Fisher at the current iterate: an anchor-time Fisher is too flat once
    // a young window has grown, and the steps blow up
    state.precond = FisherPreconditioner::at(state.theta);
    // the window moved, so the anchor gradient is refreshed every observation
    {
        const auto idx = sample_without_replacement(n, static_cast<std::size_t>(hyper.B_star), state.rng);
        state.g_anchor = mean_gradient(state.theta_anchor, window, idx);
    }

    for (int k = 0; k < hyper.K; ++k) {
        const auto idx = sample_without_replacement(n, static_cast<std::size_t>(hyper.b_star), state.rng);
        Vector step = mean_gradient(state.theta, window, idx).flat();
        if (hyper.variance_reduction) step += state.g_anchor.flat() - mean_gradient(state.theta_anchor, window, idx).flat();
        ++state.inner_steps;
        const double eta = hyper.decay ? hyper.eta / std::sqrt(static_cast<double>(state.inner_steps)) : hyper.eta;
        NigParams next = unpack(pack(state.theta) + eta * state.precond.apply(step), p);
        project_feasible(next);
        if (usable(next)) {
            next.canonicalize();
            state.theta = std::move(next);
        }
    }
    state.tau = std::max(0L, state.tau - 1);
}

} // namespace rbocpd
