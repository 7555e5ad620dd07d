#include "rbocpd/elbo.hpp"

#include "rbocpd/lbfgs_box.hpp"

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include <cmath>
#include <numbers>

namespace rbocpd {

namespace {

using boost::math::digamma;
using boost::math::trigamma;

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// Second and third polygamma by upward recurrence then the asymptotic
// series; boost's general polygamma is far slower and this sits in the
// innermost loop for small beta.
void polygamma23(double x, double &p2, double &p3) {
    p2 = 0.0;
    p3 = 0.0;
    while (x < 10.0) {
        const double x2 = x * x;
        p2 -= 2.0 / (x2 * x);
        p3 += 6.0 / (x2 * x2);
        x += 1.0;
    }
    const double r = 1.0 / x;
    const double r2 = r * r;
    p2 += -r2 * (1.0 + r * (1.0 + r * (0.5 + r2 * (-1.0 / 6.0 + r2 * (1.0 / 6.0 + r2 * (-0.3 + r2 * 5.0 / 6.0))))));
    p3 += r2 * r * (2.0 + r * (3.0 + r * (2.0 + r2 * (-1.0 + r2 * (4.0 / 3.0 + r2 * (-3.0 + r2 * 10.0))))));
}

// log Gamma(a + e) - log Gamma(a). For small e the log of a ratio near one
// loses about 1e-16 absolutely, which divided by beta is visible to the
// line search, so the Taylor series is used instead.
double lgamma_diff(double a, double e) {
    if (e == 0.0) return 0.0;
    if (std::abs(e) < 1e-3) {
        double p2 = 0.0;
        double p3 = 0.0;
        polygamma23(a, p2, p3);
        return e * (digamma(a) + e * (trigamma(a) / 2.0 + e * (p2 / 6.0 + e * p3 / 24.0)));
    }
    return -std::log(boost::math::tgamma_delta_ratio(a, e));
}

// digamma(a + e) - digamma(a)
double digamma_diff(double a, double e) {
    if (std::abs(e) < 1e-3) {
        const double p1 = trigamma(a);
        double p2 = 0.0;
        double p3 = 0.0;
        polygamma23(a, p2, p3);
        return e * (p1 + e * (p2 / 2.0 + e * p3 / 6.0));
    }
    return digamma(a + e) - digamma(a);
}

void check_feasible(const NigParams &var) {
    if (!(var.a > 1.0) || !(var.b > 1.0) || !std::isfinite(var.a) || !std::isfinite(var.b)) {
        throw DomainError("variational parameters outside a > 1, b > 1");
    }
}

struct KlPart {
    double value = 0.0;
    ElboGradient grad;
};

KlPart kl_part(const NigParams &q, const NigParams &prior, bool want_grad) {
    const Eigen::Index p = q.p();
    const auto lq = q.prec_chol.triangularView<Eigen::Lower>();
    const Matrix m = lq.solve(prior.prec_chol);
    const Vector dm = q.mu - prior.mu;
    const Vector l0t_dm = prior.prec_chol.transpose() * dm;
    const double quad = l0t_dm.squaredNorm();
    KlPart out;
    out.value = (q.a - prior.a) * digamma(q.a) - std::lgamma(q.a) + std::lgamma(prior.a) +
                prior.a * (std::log(q.b) - std::log(prior.b)) + q.a * (prior.b - q.b) / q.b +
                0.5 * (m.squaredNorm() - static_cast<double>(p) + (q.a / q.b) * quad + q.log_det_precision() -
                       prior.log_det_precision());
    if (!want_grad) return out;
    out.grad = ElboGradient::zero(p);
    out.grad.a = (q.a - prior.a) * trigamma(q.a) + (prior.b - q.b) / q.b + 0.5 * quad / q.b;
    out.grad.b = prior.a / q.b - q.a * prior.b / (q.b * q.b) - 0.5 * q.a * quad / (q.b * q.b);
    out.grad.mu = (q.a / q.b) * (prior.prec_chol * l0t_dm);
    // d/dL of 0.5 [tr(L0 L0^T (L L^T)^{-1}) + log|L L^T|] = L^{-T} (I - M M^T)
    Matrix inner = Matrix::Identity(p, p) - m * m.transpose();
    Matrix gl = lq.transpose().solve(inner);
    out.grad.vech_l = vech(gl);
    return out;
}

struct IntegralPart {
    double value = 0.0;
    double da = 0.0;
    double db = 0.0;
};

// Expected (1/(1+beta)) * integral of the likelihood to the power 1+beta.
IntegralPart integral_part(const NigParams &q, double d, double beta) {
    const double e = 0.5 * d * beta;
    IntegralPart out;
    out.value = std::exp(-e * kLog2Pi - (0.5 * d + 1.0) * std::log1p(beta) + lgamma_diff(q.a, e) - e * std::log(q.b));
    out.da = out.value * digamma_diff(q.a, e);
    out.db = -out.value * e / q.b;
    return out;
}

struct ObsPart {
    double shifted = 0.0;
    double value = 0.0;
    double da = 0.0;
    double db = 0.0;
    Vector dmu;
    Matrix dl;
};

// Expected (1/beta) f(y|theta)^beta for one observation. `shifted` is this
// minus 1/beta. The residual quadratic form is evaluated in d-space through
// S = I + beta X Lambda^{-1} X^T so it stays accurate for tiny beta.
ObsPart obs_part(const NigParams &q, const Observation &obs, double beta, double lg_diff, double dg_diff,
                 bool want_grad) {
    const Eigen::Index d = obs.y.size();
    const double dd = static_cast<double>(d);
    const double e = 0.5 * dd * beta;
    const double c = q.a + e;
    const auto lq = q.prec_chol.triangularView<Eigen::Lower>();
    const Vector resid = obs.y - obs.x * q.mu;
    const Matrix zt = lq.solve(obs.x.transpose());
    double log_det_s = 0.0;
    Vector v;
    Matrix s_inv_z;
    if (d == 1) {
        const double zz = zt.col(0).squaredNorm();
        const double s = 1.0 + beta * zz;
        log_det_s = std::log1p(beta * zz);
        v = resid / s;
        if (want_grad) s_inv_z = zt.transpose() / s;
    } else {
        Matrix s = Matrix::Identity(d, d);
        s.noalias() += beta * zt.transpose() * zt;
        Eigen::LLT<Matrix> llt(s);
        // log|I + beta Z^T Z| from the spectrum of the smaller Gram matrix;
        // logs of Cholesky pivots near one are too coarse for tiny beta
        const Matrix gram = zt.rows() <= d ? Matrix(zt * zt.transpose()) : Matrix(zt.transpose() * zt);
        const Vector ev = Eigen::SelfAdjointEigenSolver<Matrix>(gram, Eigen::EigenvaluesOnly).eigenvalues();
        for (Eigen::Index i = 0; i < ev.size(); ++i) log_det_s += std::log1p(beta * std::max(ev(i), 0.0));
        v = llt.solve(resid);
        if (want_grad) s_inv_z = llt.solve(Matrix(zt.transpose()));
    }
    const double dq = beta * resid.dot(v);
    const double k = q.b + 0.5 * dq;
    if (!(k > 0.0) || !std::isfinite(k)) throw DomainError("non-positive K term in the expected beta-loss");
    const double log1p_ratio = std::log1p(0.5 * dq / q.b);
    const double log_scaled = -e * kLog2Pi + lg_diff - e * std::log(q.b) - c * log1p_ratio - 0.5 * log_det_s;
    ObsPart out;
    out.shifted = std::expm1(log_scaled) / beta;
    out.value = std::exp(log_scaled) / beta;
    if (!want_grad) return out;
    out.da = out.value * (dg_diff - log1p_ratio);
    out.db = out.value * (0.5 * q.a * dq - e * q.b) / (q.b * k);
    const double ck = c / k;
    out.dmu = (out.value * ck * beta) * (obs.x.transpose() * v);
    const Matrix wt = lq.transpose().solve(zt);
    const Vector u = wt * v;
    const Vector ztv = zt * v;
    Matrix g = beta * (wt * s_inv_z);
    g.noalias() -= (ck * beta * beta) * u * ztv.transpose();
    out.dl = out.value * g;
    return out;
}

double elbo_relative_impl(const NigParams &var, const ElboContext &ctx) {
    check_feasible(var);
    const double beta = ctx.beta_p;
    const double d = static_cast<double>(ctx.d());
    const double lg = lgamma_diff(var.a, 0.5 * d * beta);
    double total = -kl_part(var, ctx.prior, false).value;
    for (const Observation *obs : ctx.window) total += obs_part(var, *obs, beta, lg, 0.0, false).shifted;
    total -= static_cast<double>(ctx.n()) * integral_part(var, d, beta).value;
    return total;
}

} // namespace

ElboContext ElboContext::over(const NigParams &prior, std::span<const Observation> obs, double beta_p) {
    ElboContext ctx{prior, {}, beta_p};
    ctx.window.reserve(obs.size());
    for (const auto &o : obs) ctx.window.push_back(&o);
    return ctx;
}

ElboGradient ElboGradient::zero(Eigen::Index p) {
    return {0.0, 0.0, Vector::Zero(p), Vector::Zero(vech_size(p))};
}

ElboGradient &ElboGradient::operator+=(const ElboGradient &o) {
    a += o.a;
    b += o.b;
    mu += o.mu;
    vech_l += o.vech_l;
    return *this;
}

ElboGradient &ElboGradient::operator*=(double s) {
    a *= s;
    b *= s;
    mu *= s;
    vech_l *= s;
    return *this;
}

Vector ElboGradient::flat() const {
    Vector out(2 + mu.size() + vech_l.size());
    out << a, b, mu, vech_l;
    return out;
}

double ElboGradient::max_abs() const { return flat().cwiseAbs().maxCoeff(); }

Eigen::Index vech_size(Eigen::Index p) { return p * (p + 1) / 2; }

Vector vech(const Matrix &lower) {
    const Eigen::Index p = lower.rows();
    Vector out(vech_size(p));
    Eigen::Index k = 0;
    for (Eigen::Index j = 0; j < p; ++j)
        for (Eigen::Index i = j; i < p; ++i) out(k++) = lower(i, j);
    return out;
}

Matrix unvech(const Vector &v, Eigen::Index p) {
    Matrix out = Matrix::Zero(p, p);
    Eigen::Index k = 0;
    for (Eigen::Index j = 0; j < p; ++j)
        for (Eigen::Index i = j; i < p; ++i) out(i, j) = v(k++);
    return out;
}

Vector pack(const NigParams &q) {
    Vector out(2 + q.p() + vech_size(q.p()));
    out << q.a, q.b, q.mu, vech(q.prec_chol);
    return out;
}

NigParams unpack(const Vector &theta, Eigen::Index p) {
    NigParams q;
    q.a = theta(0);
    q.b = theta(1);
    q.mu = theta.segment(2, p);
    q.prec_chol = unvech(theta.tail(vech_size(p)), p);
    return q;
}

double nig_kl(const NigParams &q, const NigParams &prior) { return kl_part(q, prior, false).value; }

double elbo_relative(const NigParams &var, const ElboContext &ctx) { return elbo_relative_impl(var, ctx); }

double elbo(const NigParams &var, const ElboContext &ctx) {
    return elbo_relative_impl(var, ctx) + static_cast<double>(ctx.n()) / ctx.beta_p;
}

ElboGradient elbo_gradient(const NigParams &var, const ElboContext &ctx) {
    std::vector<std::size_t> all(ctx.n());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return elbo_sample_gradient(var, ctx, all);
}

ElboGradient elbo_sample_gradient(const NigParams &var, const ElboContext &ctx, std::span<const std::size_t> indices) {
    check_feasible(var);
    const Eigen::Index p = var.p();
    const double beta = ctx.beta_p;
    const double d = static_cast<double>(ctx.d());
    const double n = static_cast<double>(ctx.n());
    const double e = 0.5 * d * beta;
    const double lg = lgamma_diff(var.a, e);
    const double dg = digamma_diff(var.a, e);

    ElboGradient data = ElboGradient::zero(p);
    Matrix dl = Matrix::Zero(p, p);
    for (std::size_t i : indices) {
        ObsPart part = obs_part(var, *ctx.window.at(i), beta, lg, dg, true);
        data.a += part.da;
        data.b += part.db;
        data.mu += part.dmu;
        dl += part.dl;
    }
    // d/dL of a scalar function of Lambda = L L^T with symmetric gradient G is 2 G L.
    data.vech_l = vech(dl.triangularView<Eigen::Lower>().toDenseMatrix());
    const double scale = indices.empty() ? 0.0 : n / static_cast<double>(indices.size());
    data *= scale;

    const IntegralPart ip = integral_part(var, d, beta);
    data.a -= n * ip.da;
    data.b -= n * ip.db;

    KlPart kl = kl_part(var, ctx.prior, true);
    kl.grad *= -1.0;
    data += kl.grad;
    return data;
}

Vector natural_scales(const NigParams &q) {
    const Eigen::Index p = q.p();
    Vector s(2 + p + vech_size(p));
    s(0) = std::sqrt(q.a);
    s(1) = q.b / std::sqrt(q.a);
    const Matrix cov = q.covariance();
    for (Eigen::Index j = 0; j < p; ++j) s(2 + j) = std::sqrt(q.b / q.a * cov(j, j));
    Eigen::Index k = 2 + p;
    for (Eigen::Index j = 0; j < p; ++j)
        for (Eigen::Index i = j; i < p; ++i) s(k++) = std::abs(q.prec_chol(i, i));
    return s;
}

void project_feasible(NigParams &q) {
    q.a = std::max(q.a, kFeasibleMargin);
    q.b = std::max(q.b, kFeasibleMargin);
}

NigParams conjugate_start(const ElboContext &ctx) {
    std::vector<Observation> copy;
    copy.reserve(ctx.n());
    for (const Observation *o : ctx.window) copy.push_back(*o);
    NigParams start = conjugate_update(ctx.prior, copy);
    project_feasible(start);
    return start;
}

OptimizeResult full_optimize(const NigParams &init, const ElboContext &ctx, double tol, int max_iter) {
    if (ctx.n() == 0) throw UsageError("full_optimize needs a non-empty window");
    NigParams start = init;
    project_feasible(start);
    const Eigen::Index p = start.p();
    const Vector scale = natural_scales(start);
    const Vector x0 = pack(start).cwiseQuotient(scale);
    Vector lower = Vector::Constant(x0.size(), -std::numeric_limits<double>::infinity());
    lower(0) = kFeasibleMargin / scale(0);
    lower(1) = kFeasibleMargin / scale(1);

    Objective objective = [&](const Vector &x, Vector &grad) {
        NigParams q = unpack(x.cwiseProduct(scale), p);
        if ((q.prec_chol.diagonal().array() == 0.0).any()) {
            grad.setZero(x.size());
            return std::numeric_limits<double>::infinity();
        }
        const double v = elbo_relative_impl(q, ctx);
        grad = -elbo_gradient(q, ctx).flat().cwiseProduct(scale);
        return -v;
    };
    BoxMinimizeResult r = minimize_box(objective, x0, lower, tol, max_iter);
    OptimizeResult out;
    out.params = unpack(r.x.cwiseProduct(scale), p);
    out.params.canonicalize();
    project_feasible(out.params);
    out.elbo_relative = -r.f;
    out.proj_grad_norm = r.proj_grad_norm;
    out.iterations = r.iterations;
    out.converged = r.converged;
    return out;
}

} // namespace rbocpd
