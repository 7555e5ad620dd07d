#include "rbocpd/blr.hpp"

#include "fixtures.hpp"
#include "oracles/student_t.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

using namespace rbocpd;

namespace {

double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

// Batch posterior from the augmented least-squares system [L^T; X] mu ~ [L^T mu0; y].
NigParams augmented_least_squares(const NigParams &prior, const std::vector<Observation> &batch) {
    const Eigen::Index p = prior.p();
    Eigen::Index rows = p;
    for (const auto &o : batch) rows += o.y.size();
    Matrix a(rows, p);
    Vector rhs(rows);
    Matrix lt = prior.prec_chol.transpose();
    a.topRows(p) = lt;
    rhs.head(p) = lt * prior.mu;
    Eigen::Index at = p;
    double d_total = 0.0;
    for (const auto &o : batch) {
        a.middleRows(at, o.y.size()) = o.x;
        rhs.segment(at, o.y.size()) = o.y;
        at += o.y.size();
        d_total += static_cast<double>(o.y.size());
    }
    Eigen::HouseholderQR<Matrix> qr(a);
    Vector mu = qr.solve(rhs);
    NigParams out;
    out.mu = mu;
    out.a = prior.a + 0.5 * d_total;
    out.b = prior.b + 0.5 * (a * mu - rhs).squaredNorm();
    out.prec_chol = Eigen::LLT<Matrix>(a.transpose() * a).matrixL();
    return out;
}

void check_same(const NigParams &x, const NigParams &y, double tol) {
    CHECK(rel_err(x.a, y.a) < tol);
    CHECK(rel_err(x.b, y.b) < tol);
    CHECK((x.mu - y.mu).norm() <= tol * std::max(1.0, y.mu.norm()));
    CHECK((x.precision() - y.precision()).norm() <= tol * y.precision().norm());
}

} // namespace

TEST_CASE("conjugate update at the prior mean") {
    NigParams prior = NigParams::from_covariance(1.0, 1.0, Vector::Zero(1), Matrix::Identity(1, 1));
    Observation obs{Vector::Zero(1), Matrix::Ones(1, 1)};
    NigParams post = conjugate_update(prior, obs);
    CHECK(post.a == 1.5);
    CHECK(post.b == 1.0);
    CHECK(post.mu(0) == 0.0);
    CHECK(post.covariance()(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("conjugate update matches augmented least squares") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        const Eigen::Index p = 1 + trial % 3;
        const Eigen::Index d = 1 + trial % 2;
        NigParams prior = fixtures::random_nig(rng, p);
        auto batch = fixtures::random_window(rng, 1 + trial % 7, d, p);
        check_same(conjugate_update(prior, batch), augmented_least_squares(prior, batch), 1e-10);
    }
}

TEST_CASE("sequential conjugate updates equal one batch update") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 30; ++trial) {
        const Eigen::Index p = 1 + trial % 3;
        const Eigen::Index d = 1 + trial % 3;
        NigParams prior = fixtures::random_nig(rng, p);
        auto batch = fixtures::random_window(rng, 8, d, p);
        NigParams seq = prior;
        for (const auto &o : batch) seq = conjugate_update(seq, o);
        check_same(seq, conjugate_update(prior, batch), 1e-10);
        std::shuffle(batch.begin(), batch.end(), rng);
        NigParams perm = prior;
        for (const auto &o : batch) perm = conjugate_update(perm, o);
        check_same(perm, seq, 1e-10);
    }
}

TEST_CASE("conjugate update rejects non-conformable designs") {
    NigParams prior = NigParams::from_covariance(1.0, 1.0, Vector::Zero(2), Matrix::Identity(2, 2));
    CHECK_THROWS_AS(conjugate_update(prior, Observation{Vector::Zero(1), Matrix::Ones(1, 3)}), UsageError);
}

TEST_CASE("predictive with zero regressor") {
    NigParams prior = NigParams::from_covariance(3.0, 5.0, Vector::Zero(1), Matrix::Identity(1, 1));
    auto pred = posterior_predictive(prior, Matrix::Zero(1, 1));
    CHECK(pred.dof == 6.0);
    CHECK(pred.loc(0) == 0.0);
    CHECK(pred.scale(0, 0) == doctest::Approx(5.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("prior predictive density at its mode") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::Index p = 1 + trial % 3;
        const double a0 = 3.0, b0 = 5.0;
        NigParams prior = NigParams::from_precision(a0, b0, fixtures::random_vector(rng, p), fixtures::random_spd(rng, p));
        Matrix x = fixtures::random_matrix(rng, 1, p);
        auto pred = posterior_predictive(prior, x);
        const double det = 1.0 + (x * prior.covariance() * x.transpose())(0, 0);
        const double expected = std::tgamma(a0 + 0.5) / (std::tgamma(a0) * std::sqrt(2.0 * b0 * std::numbers::pi) *
                                                         std::sqrt(det));
        CHECK(rel_err(std::exp(log_predictive_density(pred, x * prior.mu)), expected) < 1e-12);
    }
}

TEST_CASE("predictive density integrates to one") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 10; ++trial) {
        NigParams prior = fixtures::random_nig(rng, 2, 0.6, 0.2);
        Matrix x = fixtures::random_matrix(rng, 1, 2);
        auto pred = posterior_predictive(prior, x);
        const double total = oracle::integrate_line(
            [&](double y) { return std::exp(log_predictive_density(pred, Vector::Constant(1, y))); }, pred.loc(0),
            std::sqrt(pred.scale(0, 0)));
        CHECK(std::abs(total - 1.0) < 1e-9);
    }
}

TEST_CASE("standard Cauchy at its mode") {
    auto pred = StudentTPredictive::make(1.0, Vector::Zero(1), Matrix::Identity(1, 1));
    CHECK(log_predictive_density(pred, Vector::Zero(1)) == doctest::Approx(std::log(1.0 / std::numbers::pi)));
}

TEST_CASE("bivariate density matches the reference kernel") {
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        const double nu = 1.0 + trial * 0.7;
        Vector loc = fixtures::random_vector(rng, 2);
        Matrix v = fixtures::random_spd(rng, 2);
        auto pred = StudentTPredictive::make(nu, loc, v);
        Vector y = fixtures::random_vector(rng, 2, 3.0);
        const double ref = static_cast<double>(oracle::student_t_density(nu, loc, v, y));
        CHECK(rel_err(std::exp(log_predictive_density(pred, y)), ref) < 1e-12);
        const double mass = oracle::integrate_plane(
            [&](const Eigen::Vector2d &z) {
                return static_cast<double>(oracle::student_t_density(nu, loc, v, Vector(z)));
            },
            loc, v);
        CHECK(std::abs(mass - 1.0) < 1e-7);
    }
}

TEST_CASE("density decreases in Mahalanobis distance") {
    auto pred = StudentTPredictive::make(3.0, Vector::Constant(2, 1.0), Matrix::Identity(2, 2) * 2.0);
    Vector dir(2);
    dir << 0.6, -0.8;
    double prev = log_predictive_density(pred, pred.loc);
    for (double r = 0.1; r < 1e4; r *= 1.5) {
        const double cur = log_predictive_density(pred, pred.loc + r * dir);
        CHECK(cur < prev);
        prev = cur;
    }
}

TEST_CASE("power integral tends to one as beta vanishes") {
    auto pred = StudentTPredictive::make(6.0, Vector::Zero(1), Matrix::Constant(1, 1, 5.0 / 3.0));
    CHECK(std::abs(power_integral(pred, 1e-12) - 1.0) < 1e-10);
}

TEST_CASE("power integral against quadrature") {
    SUBCASE("univariate fixture") {
        auto pred = StudentTPredictive::make(6.0, Vector::Zero(1), Matrix::Constant(1, 1, 5.0 / 3.0));
        const double beta = 0.15;
        const double q = oracle::integrate_line(
            [&](double y) {
                return std::pow(
                    static_cast<double>(oracle::student_t_density(6.0, pred.loc, pred.scale, Vector::Constant(1, y))),
                    1.0 + beta);
            },
            0.0, 1.0);
        CHECK(rel_err(power_integral(pred, beta), q) < 1e-8);
    }
    SUBCASE("bivariate fixture") {
        auto pred = StudentTPredictive::make(4.0, Vector::Zero(2), Matrix::Identity(2, 2));
        const double beta = 0.25;
        const double q = oracle::integrate_plane(
            [&](const Eigen::Vector2d &z) {
                return std::pow(static_cast<double>(oracle::student_t_density(4.0, pred.loc, pred.scale, Vector(z))),
                                1.0 + beta);
            },
            Eigen::Vector2d::Zero(), Eigen::Matrix2d::Identity());
        CHECK(rel_err(power_integral(pred, beta), q) < 1e-6);
    }
}

TEST_CASE("power integral decreases in the scale determinant") {
    for (int d = 1; d <= 3; ++d) {
        double prev = std::numeric_limits<double>::infinity();
        for (double s = 1e-3; s < 1e3; s *= 2.0) {
            auto pred = StudentTPredictive::make(5.0, Vector::Zero(d), Matrix::Identity(d, d) * s);
            const double v = power_integral(pred, 0.2);
            CHECK(v < prev);
            prev = v;
        }
    }
}

TEST_CASE("score approaches the log density as beta vanishes") {
    auto pred = StudentTPredictive::make(6.0, Vector::Zero(1), Matrix::Constant(1, 1, 5.0 / 3.0));
    const double beta = 1e-6;
    for (double y : {-3.0, 0.0, 0.7, 4.0}) {
        Vector yy = Vector::Constant(1, y);
        const double shifted = beta_predictive_score(pred, yy, beta) - (1.0 / beta - 1.0 / (1.0 + beta));
        CHECK(std::abs(shifted - log_predictive_density(pred, yy)) < 1e-4);
    }
}

TEST_CASE("score of a gross outlier tends to minus the scaled integral") {
    auto pred = StudentTPredictive::make(6.0, Vector::Zero(1), Matrix::Constant(1, 1, 5.0 / 3.0));
    const double beta = 0.15;
    const double limit = -power_integral(pred, beta) / (1.0 + beta);
    CHECK(std::abs(beta_predictive_score(pred, Vector::Constant(1, 1e12), beta) - limit) < 1e-10);
}

TEST_CASE("score against a scalar re-implementation") {
    const double nu = 6.0, v = 5.0 / 3.0, beta = 0.15, y = 2.0;
    const double dens = std::tgamma((nu + 1) / 2) / (std::tgamma(nu / 2) * std::sqrt(nu * std::numbers::pi * v)) *
                        std::pow(1.0 + y * y / (nu * v), -(nu + 1) / 2);
    const double eta = beta * nu + beta + nu;
    const double integral = std::pow(std::tgamma((nu + 1) / 2) / std::tgamma(nu / 2), 1 + beta) *
                            std::tgamma(eta / 2) / std::tgamma((eta + 1) / 2) /
                            std::pow(nu * std::numbers::pi * v, beta / 2);
    const double expected = std::pow(dens, beta) / beta - integral / (1 + beta);
    auto pred = StudentTPredictive::make(nu, Vector::Zero(1), Matrix::Constant(1, 1, v));
    CHECK(rel_err(beta_predictive_score(pred, Vector::Constant(1, y), beta), expected) < 1e-13);
}

TEST_CASE("score bounds hold for all y") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        const int d = 1 + trial % 3;
        auto pred = StudentTPredictive::make(1.0 + trial * 0.3, fixtures::random_vector(rng, d),
                                             fixtures::random_spd(rng, d));
        const double beta = 0.01 + 0.02 * trial;
        const double lower = -power_integral(pred, beta) / (1.0 + beta);
        const double upper = std::exp(beta * log_predictive_density(pred, pred.loc)) / beta + lower;
        for (double scale : {0.0, 0.1, 1.0, 10.0, 1e3, 1e6}) {
            Vector y = pred.loc + scale * fixtures::random_vector(rng, d);
            const double s = beta_predictive_score(pred, y, beta);
            CHECK(s >= lower);
            CHECK(s <= upper + 1e-12 * std::abs(upper));
        }
    }
}

TEST_CASE("score derivative against finite differences") {
    std::mt19937_64 rng(19);
    for (int trial = 0; trial < 40; ++trial) {
        const int d = 1 + trial % 2;
        auto pred = StudentTPredictive::make(2.0 + trial * 0.2, fixtures::random_vector(rng, d),
                                             fixtures::random_spd(rng, d));
        const double beta = 0.05 + 0.01 * trial;
        Vector y = pred.loc + fixtures::random_vector(rng, d, 2.0);
        const double h = 1e-6;
        const double fd = (std::exp(beta_predictive_score(pred, y, beta + h)) -
                           std::exp(beta_predictive_score(pred, y, beta - h))) /
                          (2.0 * h);
        CHECK(rel_err(beta_score_derivative(pred, y, beta), fd) < 1e-4);
        const double fd_log =
            (beta_predictive_score(pred, y, beta + h) - beta_predictive_score(pred, y, beta - h)) / (2.0 * h);
        CHECK(rel_err(beta_score_log_derivative(pred, y, beta), fd_log) < 1e-6);
    }
}

TEST_CASE("score derivative is symmetric under reflection") {
    auto pred = StudentTPredictive::make(5.0, Vector::Constant(1, 2.0), Matrix::Constant(1, 1, 1.5));
    for (double off : {0.3, 1.0, 7.0}) {
        const double up = beta_score_derivative(pred, Vector::Constant(1, 2.0 + off), 0.2);
        const double down = beta_score_derivative(pred, Vector::Constant(1, 2.0 - off), 0.2);
        CHECK(up == doctest::Approx(down).epsilon(1e-14));
    }
}

TEST_CASE("score derivative stays finite for small beta") {
    auto pred = StudentTPredictive::make(5.0, Vector::Zero(1), Matrix::Constant(1, 1, 1.5));
    for (double beta : {1e-10, 1e-8, 1e-4}) {
        for (double y : {0.0, 3.0, 1e6}) {
            CHECK(std::isfinite(beta_score_log_derivative_centered(pred, Vector::Constant(1, y), beta)));
        }
    }
    CHECK(std::isfinite(beta_score_derivative(pred, Vector::Constant(1, 1.0), 0.01)));
}

TEST_CASE("expm1 ratio is continuous across the series switch") {
    for (double x : {-0.1, 0.1}) {
        const double below = expm1_ratio2(std::nextafter(x, 0.0));
        const double above = expm1_ratio2(x);
        CHECK(std::abs(below - above) < 1e-14);
    }
    CHECK(expm1_ratio2(0.0) == 0.5);
    CHECK(expm1_ratio2(-1e5) == doctest::Approx(1e-10).epsilon(1e-4));
}

TEST_CASE("centered score differs from the score by one over beta") {
    auto pred = StudentTPredictive::make(5.0, Vector::Constant(1, 1.0), Matrix::Constant(1, 1, 2.0));
    for (double beta : {0.5, 0.15, 0.01}) {
        for (double y : {-4.0, 1.0, 30.0}) {
            Vector yy = Vector::Constant(1, y);
            const double full = beta_predictive_score(pred, yy, beta);
            CHECK(std::abs(beta_predictive_score_centered(pred, yy, beta) + 1.0 / beta - full) < 1e-12 * (1.0 / beta));
        }
    }
}

TEST_CASE("centered score keeps log-density precision at tiny beta") {
    // long-double reference: (e^{beta l} - 1)/beta - I/(1+beta) with I -> 1
    auto pred = StudentTPredictive::make(7.0, Vector::Zero(2), Matrix::Identity(2, 2));
    const double beta = 1e-8;
    for (double y : {0.0, 2.0, 10.0}) {
        Vector yy = Vector::Constant(2, y);
        const long double l = log_predictive_density(pred, yy);
        const long double expected = std::expm1l(beta * l) / beta - power_integral(pred, beta) / (1.0L + beta);
        CHECK(std::abs(static_cast<long double>(beta_predictive_score_centered(pred, yy, beta)) - expected) < 1e-12L);
        CHECK(std::abs(beta_predictive_score_centered(pred, yy, beta) - (log_predictive_density(pred, yy) - 1.0)) < 1e-5);
    }
}
