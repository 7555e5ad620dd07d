#pragma once

#include "rbocpd/blr.hpp"

#include <random>

namespace fixtures {

inline rbocpd::Matrix random_matrix(std::mt19937_64 &rng, Eigen::Index r, Eigen::Index c, double sd = 1.0) {
    std::normal_distribution<double> z(0.0, sd);
    rbocpd::Matrix m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = z(rng);
    return m;
}

inline rbocpd::Vector random_vector(std::mt19937_64 &rng, Eigen::Index n, double sd = 1.0) {
    return random_matrix(rng, n, 1, sd);
}

inline rbocpd::Matrix random_spd(std::mt19937_64 &rng, Eigen::Index p, double ridge = 0.5) {
    rbocpd::Matrix a = random_matrix(rng, p, p);
    return a * a.transpose() / static_cast<double>(p) + ridge * rbocpd::Matrix::Identity(p, p);
}

inline rbocpd::NigParams random_nig(std::mt19937_64 &rng, Eigen::Index p, double a_min = 1.2, double b_min = 1.2) {
    std::uniform_real_distribution<double> ua(a_min, a_min + 5.0);
    std::uniform_real_distribution<double> ub(b_min, b_min + 5.0);
    const double a = ua(rng);
    const double b = ub(rng);
    return rbocpd::NigParams::from_precision(a, b, random_vector(rng, p), random_spd(rng, p));
}

inline std::vector<rbocpd::Observation> random_window(std::mt19937_64 &rng, int n, Eigen::Index d, Eigen::Index p,
                                                      double noise = 1.0) {
    std::vector<rbocpd::Observation> w;
    rbocpd::Vector coef = random_vector(rng, p);
    for (int i = 0; i < n; ++i) {
        rbocpd::Matrix x = random_matrix(rng, d, p);
        rbocpd::Vector y = x * coef + random_vector(rng, d, noise);
        w.push_back({y, x});
    }
    return w;
}

} // namespace fixtures

#include "rbocpd/elbo.hpp"

namespace fixtures {

struct ElboFixture {
    rbocpd::NigParams prior;
    std::vector<rbocpd::Observation> window;
    rbocpd::NigParams var;
    double beta = 0.1;

    rbocpd::ElboContext ctx() const { return rbocpd::ElboContext::over(prior, window, beta); }
};

// p <= 3, d <= 2, n <= 20, beta in [1e-3, 0.5], var feasible and near the data.
inline ElboFixture random_elbo_fixture(std::mt19937_64 &rng) {
    std::uniform_int_distribution<int> up(1, 3), ud(1, 2), un(1, 20);
    std::uniform_real_distribution<double> ulogb(std::log(1e-3), std::log(0.5));
    ElboFixture f;
    const Eigen::Index p = up(rng), d = ud(rng);
    f.prior = random_nig(rng, p, 1.0, 0.5);
    f.window = random_window(rng, un(rng), d, p, 0.7);
    f.beta = std::exp(ulogb(rng));
    rbocpd::NigParams conj = rbocpd::conjugate_update(f.prior, f.window);
    std::uniform_real_distribution<double> jitter(0.7, 1.4);
    f.var = conj;
    f.var.a = std::max(1.05, conj.a * jitter(rng));
    f.var.b = std::max(1.05, conj.b * jitter(rng));
    f.var.mu += random_vector(rng, p, 0.3);
    f.var.prec_chol *= jitter(rng);
    f.var.prec_chol.triangularView<Eigen::StrictlyLower>() += random_matrix(rng, p, p, 0.2);
    f.var.prec_chol.triangularView<Eigen::StrictlyUpper>().setZero();
    return f;
}

} // namespace fixtures
