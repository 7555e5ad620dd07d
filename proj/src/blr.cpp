#include "rbocpd/blr.hpp"

#include <boost/math/special_functions/digamma.hpp>

#include <cmath>
#include <numbers>

namespace rbocpd {

Matrix NigParams::covariance() const {
    const Eigen::Index n = p();
    Matrix linv = prec_chol.triangularView<Eigen::Lower>().solve(Matrix::Identity(n, n));
    return linv.transpose() * linv;
}

double NigParams::log_det_precision() const {
    return 2.0 * prec_chol.diagonal().array().abs().log().sum();
}

NigParams NigParams::from_precision(double a, double b, const Vector &mu, const Matrix &precision) {
    if (precision.rows() != mu.size() || precision.cols() != mu.size()) {
        throw UsageError("precision dimension does not match mean");
    }
    Eigen::LLT<Matrix> llt(precision);
    if (llt.info() != Eigen::Success) throw UsageError("precision is not positive definite");
    NigParams out{a, b, mu, llt.matrixL()};
    out.validate();
    return out;
}

NigParams NigParams::from_covariance(double a, double b, const Vector &mu, const Matrix &sigma) {
    if (sigma.rows() != mu.size() || sigma.cols() != mu.size()) {
        throw UsageError("covariance dimension does not match mean");
    }
    Eigen::LLT<Matrix> llt(sigma);
    if (llt.info() != Eigen::Success) throw UsageError("covariance is not positive definite");
    return from_precision(a, b, mu, llt.solve(Matrix::Identity(mu.size(), mu.size())));
}

void NigParams::canonicalize() {
    for (Eigen::Index j = 0; j < prec_chol.cols(); ++j) {
        if (prec_chol(j, j) < 0.0) prec_chol.col(j) *= -1.0;
    }
    prec_chol.triangularView<Eigen::StrictlyUpper>().setZero();
}

void NigParams::validate() const {
    if (!(a > 0.0) || !(b > 0.0) || !std::isfinite(a) || !std::isfinite(b)) {
        throw UsageError("NIG shape and scale must be finite and positive");
    }
    if (prec_chol.rows() != p() || prec_chol.cols() != p()) {
        throw UsageError("precision factor must be p x p");
    }
    if (!mu.allFinite() || !prec_chol.allFinite()) throw UsageError("non-finite NIG parameters");
    if ((prec_chol.diagonal().array() <= 0.0).any()) {
        throw UsageError("precision factor must have a positive diagonal");
    }
}

StudentTPredictive StudentTPredictive::make(double dof, const Vector &loc, const Matrix &scale) {
    StudentTPredictive out;
    out.dof = dof;
    out.loc = loc;
    out.scale = scale;
    Eigen::LLT<Matrix> llt(scale);
    if (llt.info() != Eigen::Success || !(dof > 0.0)) {
        throw DomainError("student-t scale must be positive definite with positive dof");
    }
    out.scale_chol = llt.matrixL();
    out.log_det_scale = 2.0 * out.scale_chol.diagonal().array().log().sum();
    return out;
}

double StudentTPredictive::mahalanobis_sq(const Vector &y) const {
    Vector z = scale_chol.triangularView<Eigen::Lower>().solve(y - loc);
    return z.squaredNorm();
}

namespace {

void check_conformable(const NigParams &prior, const Observation &obs) {
    if (obs.x.cols() != prior.p() || obs.x.rows() != obs.y.size()) {
        throw UsageError("design matrix is not conformable with the prior");
    }
}

NigParams update_from_stats(const NigParams &prior, const Matrix &xtx, const Vector &xty,
                            std::span<const Observation> batch, double d_total) {
    const Matrix lambda0 = prior.precision();
    const Matrix lambda_n = lambda0 + xtx;
    Eigen::LLT<Matrix> llt(lambda_n);
    if (llt.info() != Eigen::Success) throw DomainError("posterior precision lost definiteness");
    NigParams out;
    out.mu = llt.solve(lambda0 * prior.mu + xty);
    out.prec_chol = llt.matrixL();
    out.a = prior.a + 0.5 * d_total;
    const Vector dm = out.mu - prior.mu;
    double quad = dm.dot(lambda0 * dm);
    for (const auto &obs : batch) quad += (obs.y - obs.x * out.mu).squaredNorm();
    out.b = prior.b + 0.5 * quad;
    return out;
}

} // namespace

NigParams conjugate_update(const NigParams &prior, const Observation &obs) {
    return conjugate_update(prior, std::span<const Observation>(&obs, 1));
}

NigParams conjugate_update(const NigParams &prior, std::span<const Observation> batch) {
    const Eigen::Index p = prior.p();
    Matrix xtx = Matrix::Zero(p, p);
    Vector xty = Vector::Zero(p);
    double d_total = 0.0;
    for (const auto &obs : batch) {
        check_conformable(prior, obs);
        xtx.noalias() += obs.x.transpose() * obs.x;
        xty.noalias() += obs.x.transpose() * obs.y;
        d_total += static_cast<double>(obs.y.size());
    }
    return update_from_stats(prior, xtx, xty, batch, d_total);
}

StudentTPredictive posterior_predictive(const NigParams &params, const Matrix &x) {
    if (x.cols() != params.p()) throw UsageError("design matrix is not conformable with the posterior");
    const Eigen::Index d = x.rows();
    // X Sigma X^T = Z Z^T with Z = X L^{-T}
    Matrix zt = params.prec_chol.triangularView<Eigen::Lower>().solve(x.transpose());
    Matrix v = Matrix::Identity(d, d);
    v.noalias() += zt.transpose() * zt;
    v *= params.b / params.a;
    return StudentTPredictive::make(2.0 * params.a, x * params.mu, v);
}

double log_predictive_density(const StudentTPredictive &pred, const Vector &y) {
    const double nu = pred.dof;
    const double d = static_cast<double>(pred.d());
    const double q = pred.mahalanobis_sq(y);
    return std::lgamma(0.5 * (nu + d)) - std::lgamma(0.5 * nu) - 0.5 * d * std::log(nu * std::numbers::pi) -
           0.5 * pred.log_det_scale - 0.5 * (nu + d) * std::log1p(q / nu);
}

double log_power_integral(const StudentTPredictive &pred, double beta) {
    const double nu = pred.dof;
    const double d = static_cast<double>(pred.d());
    const double eta = beta * nu + beta * d + nu;
    return (1.0 + beta) * (std::lgamma(0.5 * (nu + d)) - std::lgamma(0.5 * nu)) + std::lgamma(0.5 * eta) -
           std::lgamma(0.5 * (eta + d)) - 0.5 * beta * d * std::log(nu * std::numbers::pi) -
           0.5 * beta * pred.log_det_scale;
}

double power_integral(const StudentTPredictive &pred, double beta) {
    return std::exp(log_power_integral(pred, beta));
}

double beta_predictive_score(const StudentTPredictive &pred, const Vector &y, double beta) {
    const double l = log_predictive_density(pred, y);
    return std::exp(beta * l) / beta - power_integral(pred, beta) / (1.0 + beta);
}

double beta_predictive_score_centered(const StudentTPredictive &pred, const Vector &y, double beta) {
    const double l = log_predictive_density(pred, y);
    const double x = beta * l;
    // (e^x - 1) / beta without cancellation
    const double lead = std::abs(x) < 1e-300 ? l : l * (std::expm1(x) / x);
    return lead - power_integral(pred, beta) / (1.0 + beta);
}

double expm1_ratio2(double x) {
    if (std::abs(x) < 0.1) {
        static constexpr double c[] = {1.0 / 2,   1.0 / 3,    1.0 / 8,     1.0 / 30,     1.0 / 144,
                                       1.0 / 840, 1.0 / 5760, 1.0 / 45360, 1.0 / 403200};
        double acc = 0.0;
        for (int k = 8; k >= 0; --k) acc = acc * x + c[k];
        return acc;
    }
    return (std::exp(x) * (x - 1.0) + 1.0) / (x * x);
}

double beta_score_log_derivative_centered(const StudentTPredictive &pred, const Vector &y, double beta) {
    using boost::math::digamma;
    const double nu = pred.dof;
    const double d = static_cast<double>(pred.d());
    const double eta = beta * nu + beta * d + nu;
    const double l = log_predictive_density(pred, y);
    const double dlog_int = std::lgamma(0.5 * (nu + d)) - std::lgamma(0.5 * nu) +
                            0.5 * (nu + d) * (digamma(0.5 * eta) - digamma(0.5 * (eta + d))) -
                            0.5 * d * std::log(nu * std::numbers::pi) - 0.5 * pred.log_det_scale;
    const double integral_term = power_integral(pred, beta) / (1.0 + beta);
    return l * l * expm1_ratio2(beta * l) - integral_term * (dlog_int - 1.0 / (1.0 + beta));
}

double beta_score_log_derivative(const StudentTPredictive &pred, const Vector &y, double beta) {
    return beta_score_log_derivative_centered(pred, y, beta) - 1.0 / (beta * beta);
}

double beta_score_derivative(const StudentTPredictive &pred, const Vector &y, double beta) {
    return std::exp(beta_predictive_score(pred, y, beta)) * beta_score_log_derivative(pred, y, beta);
}

} // namespace rbocpd
