#ifndef RBOCPD_BLR_HPP
#define RBOCPD_BLR_HPP

#include "rbocpd/core.hpp"

#include <span>

namespace rbocpd {

/**
 * Normal-Inverse-Gamma block for y ~ N(X mu, sigma^2 I),
 * mu | sigma^2 ~ N(mu, sigma^2 Sigma), sigma^2 ~ IG(a, b).
 *
 * The precision Sigma^{-1} = L L^T is held through its lower Cholesky
 * factor `prec_chol`.
 */
struct NigParams {
    double a = 1.0;
    double b = 1.0;
    Vector mu;
    Matrix prec_chol;

    Eigen::Index p() const { return mu.size(); }
    Matrix precision() const { return prec_chol * prec_chol.transpose(); }
    Matrix covariance() const;
    double log_det_precision() const;

    static NigParams from_covariance(double a, double b, const Vector &mu, const Matrix &sigma);
    static NigParams from_precision(double a, double b, const Vector &mu, const Matrix &precision);

    /// Flip column signs so the Cholesky diagonal is positive.
    void canonicalize();
    void validate() const;
};

/// Multivariate Student-t with kernel (1 + (y-loc)^T V^{-1} (y-loc) / dof)^{-(dof+d)/2}.
struct StudentTPredictive {
    double dof = 1.0;
    Vector loc;
    Matrix scale;
    Matrix scale_chol;
    double log_det_scale = 0.0;

    static StudentTPredictive make(double dof, const Vector &loc, const Matrix &scale);
    Eigen::Index d() const { return loc.size(); }
    double mahalanobis_sq(const Vector &y) const;
};

NigParams conjugate_update(const NigParams &prior, const Observation &obs);
NigParams conjugate_update(const NigParams &prior, std::span<const Observation> batch);

StudentTPredictive posterior_predictive(const NigParams &params, const Matrix &x);

double log_predictive_density(const StudentTPredictive &pred, const Vector &y);

/// log of the integral of f^{1+beta} over R^d.
double log_power_integral(const StudentTPredictive &pred, double beta);
double power_integral(const StudentTPredictive &pred, double beta);

/// (1/beta) f(y)^beta - (1/(1+beta)) * integral of f^{1+beta}.
double beta_predictive_score(const StudentTPredictive &pred, const Vector &y, double beta);

/// beta_predictive_score - 1/beta. The 1/beta term is shared by every
/// hypothesis; dropping it keeps the small-beta regime accurate.
double beta_predictive_score_centered(const StudentTPredictive &pred, const Vector &y, double beta);

/// d/dbeta of exp(beta_predictive_score).
double beta_score_derivative(const StudentTPredictive &pred, const Vector &y, double beta);

/// d/dbeta of beta_predictive_score itself.
double beta_score_log_derivative(const StudentTPredictive &pred, const Vector &y, double beta);

/// beta_score_log_derivative + 1/beta^2. The -1/beta^2 term is shared by
/// every hypothesis and cancels in normalized posteriors.
double beta_score_log_derivative_centered(const StudentTPredictive &pred, const Vector &y, double beta);

/// (e^x (x - 1) + 1) / x^2, continuous at 0.
double expm1_ratio2(double x);

} // namespace rbocpd

#endif
