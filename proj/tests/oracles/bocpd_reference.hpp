#pragma once

// Reference implementations the detector is checked against. Neither uses
// the detector's recursion.

#include "rbocpd/detector.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <tuple>
#include <vector>

namespace oracle {

using rbocpd::Matrix;
using rbocpd::NigParams;
using rbocpd::Vector;

inline double lse(const std::vector<double> &v) {
    double mx = -INFINITY;
    for (double x : v) mx = std::max(mx, x);
    if (mx == -INFINITY) return mx;
    double s = 0.0;
    for (double x : v) s += std::exp(x - mx);
    return mx + std::log(s);
}

/// designs[k][t] is model k's design for y_t (0-based t).
using Designs = std::vector<std::vector<Matrix>>;

inline Designs build_designs(const std::vector<rbocpd::ModelSpec> &models, const std::vector<Vector> &ys) {
    Designs out(models.size());
    const Eigen::Index d = ys.front().size();
    for (std::size_t k = 0; k < models.size(); ++k) {
        std::deque<Vector> hist;
        for (const auto &y : ys) {
            out[k].push_back(models[k].design_matrix(hist, d));
            hist.push_front(y);
        }
    }
    return out;
}

/**
 * Log evidence by summing over every (segmentation, model-per-segment)
 * path explicitly. A segment's parameter posterior after y_s..y_e is
 * obtained by replaying the per-hypothesis optimizer on exactly that data
 * with the seed the detector would use, so the only thing compared is the
 * sum over paths.
 */
class PathEnumeration {
public:
    PathEnumeration(const rbocpd::DetectorConfig &cfg, std::vector<Vector> ys)
        : cfg_(cfg), ys_(std::move(ys)), x_(build_designs(cfg.models, ys_)) {}

    double log_evidence() {
        const double h = cfg_.hazard.h();
        std::vector<double> leaves;
        const std::size_t n_models = cfg_.models.size();
        std::function<void(std::size_t, std::size_t, std::size_t, double)> walk =
            [&](std::size_t t, std::size_t start, std::size_t k, double acc) {
                if (t == ys_.size()) {
                    leaves.push_back(acc);
                    return;
                }
                walk(t + 1, start, k, acc + std::log1p(-h) + score(k, start, t));
                for (std::size_t k2 = 0; k2 < n_models; ++k2) {
                    walk(t + 1, t, k2, acc + std::log(h) + log_q(k2) + score(k2, t, t));
                }
            };
        for (std::size_t k = 0; k < n_models; ++k) walk(1, 0, k, log_q(k) + score(k, 0, 0));
        return lse(leaves);
    }

private:
    double log_q(std::size_t k) const {
        return cfg_.model_prior.empty() ? -std::log(static_cast<double>(cfg_.models.size()))
                                        : std::log(cfg_.model_prior[k]);
    }

    // Score of y_t for a segment of model k that started at `start`.
    double score(std::size_t k, std::size_t start, std::size_t t) {
        auto key = std::make_tuple(k, start, t);
        auto it = score_cache_.find(key);
        if (it != score_cache_.end()) return it->second;
        const NigParams &post = start == t ? cfg_.models[k].prior : posterior(k, start, t - 1);
        auto pred = rbocpd::posterior_predictive(post, x_[k][t]);
        const double s = rbocpd::beta_predictive_score(pred, ys_[t], cfg_.beta_rlm);
        score_cache_[key] = s;
        return s;
    }

    const NigParams &posterior(std::size_t k, std::size_t start, std::size_t end) {
        auto key = std::make_tuple(k, start, end);
        auto it = post_cache_.find(key);
        if (it != post_cache_.end()) return it->second.theta;
        const auto &spec = cfg_.models[k];
        rbocpd::SvrgState st = rbocpd::SvrgState::fresh(spec.prior, cfg_.seed, spec.id, start + 1);
        std::vector<rbocpd::Observation> seg;
        for (std::size_t s = start; s <= end; ++s) seg.push_back({ys_[s], x_[k][s]});
        for (std::size_t s = start; s <= end; ++s) {
            rbocpd::ElboContext ctx{spec.prior, {}, spec.beta_p};
            const long r = static_cast<long>(s - start);
            for (long j = r; j >= 0 && static_cast<long>(ctx.window.size()) < cfg_.svrg.W; --j) {
                ctx.window.push_back(&seg[static_cast<std::size_t>(j)]);
            }
            rbocpd::svrg_observe(st, cfg_.svrg, r, ctx);
            post_cache_.emplace(std::make_tuple(k, start, s), st);
        }
        return post_cache_.at(key).theta;
    }

    rbocpd::DetectorConfig cfg_;
    std::vector<Vector> ys_;
    Designs x_;
    std::map<std::tuple<std::size_t, std::size_t, std::size_t>, double> score_cache_;
    std::map<std::tuple<std::size_t, std::size_t, std::size_t>, rbocpd::SvrgState> post_cache_;
};

/// Exact conjugate NIG regression in information form.
struct ConjugateNig {
    Matrix lambda;
    Vector eta; // lambda * mu
    double a;
    double b;

    static ConjugateNig from(const NigParams &p) {
        Matrix lam = p.precision();
        return {lam, lam * p.mu, p.a, p.b};
    }

    Vector mean() const { return lambda.ldlt().solve(eta); }

    // Multivariate Student-t log density of y under the predictive.
    double log_predictive(const Vector &y, const Matrix &x) const {
        const double d = static_cast<double>(y.size());
        const Vector mu = mean();
        const Matrix sigma = lambda.inverse();
        const Matrix scale = (b / a) * (Matrix::Identity(y.size(), y.size()) + x * sigma * x.transpose());
        const Vector e = y - x * mu;
        const double nu = 2.0 * a;
        const double q = e.dot(scale.ldlt().solve(e));
        const double logdet = std::log(scale.determinant());
        return std::lgamma((nu + d) / 2) - std::lgamma(nu / 2) - d / 2 * std::log(nu * std::numbers::pi) -
               logdet / 2 - (nu + d) / 2 * std::log1p(q / nu);
    }

    ConjugateNig updated(const Vector &y, const Matrix &x) const {
        ConjugateNig n{lambda + x.transpose() * x, eta + x.transpose() * y, a + 0.5 * static_cast<double>(y.size()), b};
        const Vector m0 = mean();
        const Vector m1 = n.mean();
        n.b = b + 0.5 * (y.squaredNorm() + m0.dot(lambda * m0) - m1.dot(n.lambda * m1));
        return n;
    }
};

/// Standard-likelihood BOCPD with exact conjugate posteriors and no pruning.
/// A new segment's first observation is scored under the prior predictive.
class ConjugateBocpd {
public:
    struct Entry {
        long r;
        int model;
        double log_joint;
        ConjugateNig post;
    };

    ConjugateBocpd(std::vector<rbocpd::ModelSpec> models, double lambda) : models_(std::move(models)), h_(1.0 / lambda) {}

    void step(const Vector &y, const std::vector<Matrix> &x) {
        const double log_q = -std::log(static_cast<double>(models_.size()));
        std::vector<Entry> next;
        std::vector<double> cp_terms;
        for (const auto &e : entries_) cp_terms.push_back(e.log_joint + std::log(h_));
        const double cp = entries_.empty() ? 0.0 : lse(cp_terms);
        for (std::size_t k = 0; k < models_.size(); ++k) {
            ConjugateNig prior = ConjugateNig::from(models_[k].prior);
            next.push_back({0, models_[k].id, log_q + prior.log_predictive(y, x[k]) + cp, prior.updated(y, x[k])});
        }
        for (const auto &e : entries_) {
            std::size_t k = 0;
            while (models_[k].id != e.model) ++k;
            next.push_back({e.r + 1, e.model, e.log_joint + std::log1p(-h_) + e.post.log_predictive(y, x[k]),
                            e.post.updated(y, x[k])});
        }
        entries_ = std::move(next);
    }

    std::map<std::pair<long, int>, double> posterior() const {
        std::vector<double> lj;
        for (const auto &e : entries_) lj.push_back(e.log_joint);
        const double z = lse(lj);
        std::map<std::pair<long, int>, double> out;
        for (const auto &e : entries_) out[{e.r, e.model}] = std::exp(e.log_joint - z);
        return out;
    }

private:
    std::vector<rbocpd::ModelSpec> models_;
    double h_;
    std::vector<Entry> entries_;
};

} // namespace oracle
