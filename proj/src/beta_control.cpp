#include "rbocpd/beta_control.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

namespace rbocpd {

InfluenceProbe InfluenceProbe::around(double target_md, int points, double span) {
    if (!(target_md > 0.0) || points < 2 || !(span > 1.0)) throw UsageError("bad influence probe");
    InfluenceProbe probe;
    probe.target_md = target_md;
    const double top = span * target_md;
    for (int i = 1; i <= points; ++i) probe.grid.push_back(top * i / points);
    return probe;
}

void InfluenceProbe::validate() const {
    if (!(target_md > 0.0)) throw UsageError("target_md must be positive");
    if (grid.size() < 2) throw UsageError("influence grid needs at least two points");
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (!(grid[i] > 0.0)) throw UsageError("influence grid must be positive");
        if (i > 0 && !(grid[i] > grid[i - 1])) throw UsageError("influence grid must be increasing");
    }
    if (target_md < grid.front() || target_md > grid.back()) throw UsageError("target_md outside the grid");
    if (mc_samples < 1) throw UsageError("mc_samples must be positive");
}

namespace {

std::vector<Vector> probe_directions(Eigen::Index d, const InfluenceProbe &probe) {
    std::vector<Vector> dirs;
    dirs.push_back(Vector::Ones(d) / std::sqrt(static_cast<double>(d)));
    if (d == 1) return dirs;
    std::mt19937_64 rng(probe.seed);
    std::normal_distribution<double> z;
    for (int k = 1; k < probe.mc_samples; ++k) {
        Vector u(d);
        for (Eigen::Index j = 0; j < d; ++j) u(j) = z(rng);
        dirs.push_back(u / u.norm());
    }
    return dirs;
}

} // namespace

InfluenceParts influence_parts(double beta_p, const NigParams &prior, const Matrix &x, double md,
                               const InfluenceProbe &probe) {
    if (!(beta_p > 0.0)) throw DomainError("beta_p must be positive");
    if (!(md >= 0.0)) throw UsageError("md must be non-negative");
    if (x.cols() != prior.p()) throw UsageError("design does not match the prior");
    const StudentTPredictive pred = posterior_predictive(prior, x);
    const Matrix prec0 = prior.precision();

    InfluenceParts out;
    const auto dirs = probe_directions(x.rows(), probe);
    for (const Vector &u : dirs) {
        Observation obs{pred.loc + md * (pred.scale_chol * u), x};
        ElboContext ctx{prior, {&obs}, beta_p};
        // start at the prior: a discounted observation barely moves it
        OptimizeResult opt = full_optimize(prior, ctx);
        const NigParams &q = opt.params;
        const Vector dm = q.mu - prior.mu;
        out.total += nig_kl(q, prior);
        out.location += 0.5 * (q.a / q.b) * dm.dot(prec0 * dm);
    }
    out.total /= static_cast<double>(dirs.size());
    out.location /= static_cast<double>(dirs.size());
    return out;
}

double influence_at(double beta_p, const NigParams &prior, const Matrix &x, double md, const InfluenceProbe &probe) {
    const InfluenceParts parts = influence_parts(beta_p, prior, x, md, probe);
    return probe.block == InfluenceBlock::location ? parts.location : parts.total;
}

std::vector<double> influence_curve(double beta_p, const NigParams &prior, const Matrix &x,
                                    const InfluenceProbe &probe) {
    std::vector<double> out;
    out.reserve(probe.grid.size());
    for (double md : probe.grid) out.push_back(influence_at(beta_p, prior, x, md, probe));
    return out;
}

double default_target_md(Eigen::Index d, double k) {
    return d <= 3 ? k : std::sqrt(static_cast<double>(d));
}

InitResult init_beta_p(const NigParams &prior, const Matrix &x, Eigen::Index d, const InfluenceProbe &probe,
                       double eps_min) {
    probe.validate();
    if (x.rows() != d) throw UsageError("design rows must equal d");
    if (!(eps_min > 0.0) || eps_min >= 2.0) throw UsageError("eps_min out of range");

    std::size_t target = 0;
    for (std::size_t i = 1; i < probe.grid.size(); ++i) {
        if (std::abs(probe.grid[i] - probe.target_md) < std::abs(probe.grid[target] - probe.target_md)) target = i;
    }
    auto peak = [&](double beta) {
        const auto curve = influence_curve(beta, prior, x, probe);
        return static_cast<std::size_t>(std::max_element(curve.begin(), curve.end()) - curve.begin());
    };

    // The peak moves inward as beta_p grows. Bisect in log beta_p for the
    // two edges of the set of beta_p values peaking at the target point.
    const double lo0 = std::log(eps_min);
    const double hi0 = std::log(2.0);
    InitResult res;
    res.target_index = target;
    const std::size_t peak_lo = peak(eps_min);
    const std::size_t peak_hi = peak(2.0);
    if (peak_lo < target || peak_hi > target) {
        res.at_boundary = true;
        res.beta_p = peak_lo < target ? eps_min : 2.0;
        res.curve = influence_curve(res.beta_p, prior, x, probe);
        return res;
    }
    // edge(strict): largest log beta with peak > target (strict) or >= target
    auto edge = [&](bool strict) {
        double lo = lo0;
        double hi = hi0;
        for (int it = 0; it < 60 && hi - lo > 1e-4; ++it) {
            const double mid = 0.5 * (lo + hi);
            const std::size_t pk = peak(std::exp(mid));
            if (strict ? pk > target : pk >= target) lo = mid;
            else hi = mid;
        }
        return 0.5 * (lo + hi);
    };
    const double left = edge(true);
    const double right = edge(false);
    res.beta_p = std::exp(0.5 * (left + right));
    res.curve = influence_curve(res.beta_p, prior, x, probe);
    return res;
}

double LossSpec::loss(const Vector &err) const { return std::min(err.lpNorm<1>(), tau_l); }

Vector LossSpec::dloss_dyhat(const Vector &err) const {
    if (err.lpNorm<1>() >= tau_l) return Vector::Zero(err.size());
    // err = y - yhat
    return -err.unaryExpr([](double e) { return e > 0.0 ? 1.0 : (e < 0.0 ? -1.0 : 0.0); });
}

void LossSpec::validate() const {
    if (!(tau_l > 0.0)) throw UsageError("tau_L must be positive");
    if (!(fd_step > 0.0) || fd_step >= 1.0) throw UsageError("fd_step must be in (0, 1)");
}

namespace {

double buffered_step(std::vector<double> &buf, double grad, std::size_t len, double eta, double clip, bool &stepped) {
    buf.push_back(grad);
    stepped = false;
    if (buf.size() < len) return 0.0;
    double mean = 0.0;
    for (double g : buf) mean += g;
    mean /= static_cast<double>(buf.size());
    buf.clear();
    stepped = true;
    return std::clamp(-eta * mean, -clip, clip);
}

} // namespace

BetaUpdate online_beta_update(BetaState beta, const LossSpec &loss, std::size_t t, const Vector &err,
                              const Vector &dyhat_drlm, const std::optional<Vector> &dyhat_dp) {
    if (err.size() != dyhat_drlm.size()) throw UsageError("error and derivative sizes differ");
    BetaUpdate out;
    const Vector dl = loss.dloss_dyhat(err);
    const double eta = beta.step_schedule(t);

    const double g_rlm = dl.dot(dyhat_drlm);
    if (std::isfinite(g_rlm)) {
        out.step_rlm = buffered_step(beta.grad_buffer_rlm, g_rlm, beta.buffer_len, eta, beta.clip_rlm, out.stepped_rlm);
        beta.beta_rlm = std::max(beta.eps_min, beta.beta_rlm + out.step_rlm);
    }
    if (dyhat_dp) {
        const double g_p = dl.dot(*dyhat_dp);
        if (std::isfinite(g_p)) {
            out.step_p = buffered_step(beta.grad_buffer_p, g_p, beta.buffer_len, eta, beta.clip_p, out.stepped_p);
            beta.beta_p = std::max(beta.eps_min, beta.beta_p + out.step_p);
        }
    }
    if (out.stepped_rlm || out.stepped_p) ++beta.steps_taken;
    out.state = std::move(beta);
    return out;
}

BetaTuner::BetaTuner(DetectorConfig config, Eigen::Index d, BetaState beta, LossSpec loss, bool tune)
    : beta_p0_(beta.beta_p), main_(config, d), shadows_{Detector(config, d), Detector(config, d)},
      beta_(std::move(beta)), loss_(loss), tune_(tune) {
    beta_.validate();
    loss_.validate();
    push_betas();
}

void BetaTuner::push_betas() {
    const double ratio = beta_.beta_p / beta_p0_;
    main_.set_beta_rlm(beta_.beta_rlm);
    main_.set_beta_p_ratio(ratio);
    shadows_[0].set_beta_rlm(beta_.beta_rlm);
    shadows_[0].set_beta_p_ratio(ratio * (1.0 + loss_.fd_step));
    shadows_[1].set_beta_rlm(beta_.beta_rlm);
    shadows_[1].set_beta_p_ratio(ratio * (1.0 - loss_.fd_step));
}

namespace {

std::set<std::pair<long, int>> hypothesis_set(const Detector &det) {
    std::set<std::pair<long, int>> out;
    for (const auto &e : det.entries()) out.emplace(e.r, e.model);
    return out;
}

} // namespace

DetectorSnapshot BetaTuner::observe(const Vector &y) {
    if (!tune_) return main_.observe(y);

    // the shadows' forecasts for y_t come from their state before y_t
    const bool same_sets = hypothesis_set(shadows_[0]) == hypothesis_set(shadows_[1]);
    const Vector up = shadows_[0].predict();
    const Vector down = shadows_[1].predict();

    DetectorSnapshot snap;
    std::array<Detector *, 3> all{&main_, &shadows_[0], &shadows_[1]};
    std::array<DetectorSnapshot, 3> snaps;
    const bool parallel = main_.config().parallel;
#pragma omp parallel for if (parallel) schedule(static, 1)
    for (int i = 0; i < 3; ++i) snaps[static_cast<std::size_t>(i)] = all[static_cast<std::size_t>(i)]->observe(y);
    snap = std::move(snaps[0]);

    std::optional<Vector> dyhat_dp;
    if (same_sets) {
        dyhat_dp = (up - down) / (2.0 * loss_.fd_step * beta_.beta_p);
    } else {
        std::ostringstream msg;
        msg << "t=" << snap.t << ": shadow hypothesis sets differ, beta_p gradient skipped";
        log_.push_back(msg.str());
    }
    BetaUpdate upd = online_beta_update(beta_, loss_, snap.t, snap.prediction_error, snap.prediction_drlm, dyhat_dp);
    beta_ = std::move(upd.state);
    if (upd.stepped_rlm || upd.stepped_p) push_betas();
    snap.beta_rlm = beta_.beta_rlm;
    snap.beta_p_ratio = beta_.beta_p / beta_p0_;
    return snap;
}

} // namespace rbocpd
