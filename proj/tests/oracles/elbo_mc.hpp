#pragma once
// Monte-Carlo and textbook references for the variational objective.

#include "rbocpd/blr.hpp"

#include <boost/math/special_functions/digamma.hpp>

#include <cmath>
#include <random>

namespace oracle {

// KL(q || p) for NIG = KL of the inverse-gamma marginals plus the expected
// Gaussian KL under q(sigma^2) (E[1/sigma^2] = a/b).
inline double nig_kl(const rbocpd::NigParams &q, const rbocpd::NigParams &p) {
    const double ig = (q.a - p.a) * boost::math::digamma(q.a) - std::lgamma(q.a) + std::lgamma(p.a) +
                      p.a * std::log(q.b / p.b) + q.a * (p.b - q.b) / q.b;
    const Eigen::MatrixXd sq = q.covariance();
    const Eigen::MatrixXd sp = p.covariance();
    const Eigen::MatrixXd sp_inv = sp.inverse();
    const Eigen::VectorXd dm = q.mu - p.mu;
    const double k = static_cast<double>(q.p());
    const double gauss = 0.5 * ((sp_inv * sq).trace() + (q.a / q.b) * dm.dot(sp_inv * dm) - k +
                                std::log(sp.determinant() / sq.determinant()));
    return ig + gauss;
}

struct McEstimate {
    double mean;
    double std_error;
};

// E_q[ sum_i (1/beta) N(y_i; X_i mu, s2 I)^beta - n/(1+beta) int N^{1+beta} ] by plain sampling.
inline McEstimate expected_beta_loss(const rbocpd::NigParams &q, const std::vector<rbocpd::Observation> &window,
                                     double beta, int samples, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::gamma_distribution<double> gam(q.a, 1.0);
    std::normal_distribution<double> z(0.0, 1.0);
    const Eigen::Index p = q.p();
    const Eigen::MatrixXd chol_cov = q.covariance().llt().matrixL();
    const double d = static_cast<double>(window.front().y.size());
    const double pi = 3.14159265358979323846;
    double sum = 0.0, sum_sq = 0.0;
    for (int s = 0; s < samples; ++s) {
        const double s2 = q.b / gam(rng);
        Eigen::VectorXd e(p);
        for (Eigen::Index j = 0; j < p; ++j) e(j) = z(rng);
        const Eigen::VectorXd mu = q.mu + std::sqrt(s2) * chol_cov * e;
        double val = 0.0;
        for (const auto &obs : window) {
            const double r2 = (obs.y - obs.x * mu).squaredNorm();
            const double logn = -0.5 * d * std::log(2 * pi * s2) - 0.5 * r2 / s2;
            val += std::exp(beta * logn) / beta;
        }
        val -= static_cast<double>(window.size()) / (1.0 + beta) * std::pow(2 * pi * s2, -0.5 * d * beta) *
               std::pow(1.0 + beta, -0.5 * d);
        sum += val;
        sum_sq += val * val;
    }
    const double mean = sum / samples;
    const double var = sum_sq / samples - mean * mean;
    return {mean, std::sqrt(var / samples)};
}

} // namespace oracle
