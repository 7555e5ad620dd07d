#include "rbocpd/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace rbocpd {

Eigen::Index ModelSpec::p(Eigen::Index d) const {
    const Eigen::Index per_lag = design == DesignKind::per_stream ? d : 1;
    return per_lag * lag + (include_intercept ? 1 : 0);
}

Matrix ModelSpec::design_matrix(const std::deque<Vector> &history, Eigen::Index d) const {
    Matrix x = Matrix::Zero(d, p(d));
    Eigen::Index col = 0;
    if (include_intercept) x.col(col++).setOnes();
    for (int l = 0; l < lag; ++l) {
        if (static_cast<std::size_t>(l) >= history.size()) break;
        const Vector &past = history[static_cast<std::size_t>(l)];
        if (design == DesignKind::per_stream) {
            for (Eigen::Index j = 0; j < d; ++j) x(j, col + l * d + j) = past(j);
        } else {
            x.col(col + l) = past;
        }
    }
    return x;
}

void ModelSpec::validate(Eigen::Index d) const {
    if (lag < 0) throw UsageError("model " + std::to_string(id) + ": lag must be non-negative");
    if (p(d) < 1) throw UsageError("model " + std::to_string(id) + ": needs a lag or an intercept");
    if (prior.p() != p(d)) {
        std::ostringstream os;
        os << "model " << id << ": prior has dimension " << prior.p() << " but the design has " << p(d);
        throw UsageError(os.str());
    }
    prior.validate();
    if (!(beta_p > 0.0)) throw UsageError("model " + std::to_string(id) + ": beta_p must be positive");
}

void DetectorConfig::validate(Eigen::Index d) const {
    if (d < 1) throw UsageError("observation dimension must be >= 1");
    if (models.empty()) throw UsageError("at least one model is required");
    for (std::size_t i = 0; i < models.size(); ++i) {
        models[i].validate(d);
        for (std::size_t j = 0; j < i; ++j) {
            if (models[j].id == models[i].id) throw UsageError("duplicate model id " + std::to_string(models[i].id));
        }
    }
    if (!model_prior.empty()) {
        if (model_prior.size() != models.size()) throw UsageError("model prior must have one weight per model");
        double total = 0.0;
        for (double q : model_prior) {
            if (!(q > 0.0)) throw UsageError("model prior weights must be positive");
            total += q;
        }
        if (std::abs(total - 1.0) > 1e-9) throw UsageError("model prior must sum to one");
    }
    hazard.validate();
    if (!(beta_rlm > 0.0)) throw UsageError("beta_rlm must be positive");
    if (svrg.W < 1 || svrg.B_star < 1 || svrg.b_star < 1 || svrg.m < 1 || svrg.K < 1 || !(svrg.eta > 0.0)) {
        throw UsageError("svrg settings must be positive");
    }
}

Detector::Detector(DetectorConfig config, Eigen::Index d) : config_(std::move(config)), d_(d) {
    config_.validate(d_);
    for (const auto &m : config_.models) history_len_ = std::max(history_len_, static_cast<std::size_t>(m.lag));
    windows_.resize(config_.models.size());
}

double Detector::log_q(std::size_t model_index) const {
    if (config_.model_prior.empty()) return -std::log(static_cast<double>(config_.models.size()));
    return std::log(config_.model_prior[model_index]);
}

ElboContext Detector::window_for(std::size_t model_index, long r) const {
    const ModelSpec &spec = config_.models[model_index];
    ElboContext ctx{spec.prior, {}, spec.beta_p * beta_p_ratio_};
    const auto &buf = windows_[model_index];
    const std::size_t n = std::min(buf.size(), static_cast<std::size_t>(r) + 1);
    ctx.window.reserve(n);
    for (std::size_t i = 0; i < n; ++i) ctx.window.push_back(&buf[i]);
    return ctx;
}

std::map<int, Matrix> Detector::next_designs() const {
    std::map<int, Matrix> out;
    for (const auto &m : config_.models) out.emplace(m.id, m.design_matrix(history_, d_));
    return out;
}

void Detector::set_beta_rlm(double beta) {
    if (!(beta > 0.0) || !std::isfinite(beta)) throw UsageError("beta_rlm must be positive");
    config_.beta_rlm = beta;
}

void Detector::set_beta_p_ratio(double ratio) {
    if (!(ratio > 0.0) || !std::isfinite(ratio)) throw UsageError("beta_p ratio must be positive");
    beta_p_ratio_ = ratio;
}

DetectorSnapshot Detector::observe(const Vector &y) {
    if (config_.condition_on_lags && entries_.empty() && history_.size() < history_len_) {
        if (y.size() != d_) throw UsageError("observation dimension changed mid-stream");
        if (!y.allFinite()) throw DataError("observation " + std::to_string(t_ + 1) + " is not finite");
        history_.push_front(y);
        ++t_;
        first_t_ = t_ + 1;
        DetectorSnapshot snap;
        snap.t = t_;
        snap.warmup = true;
        snap.prediction = y;
        snap.prediction_error = Vector::Zero(d_);
        snap.prediction_drlm = Vector::Zero(d_);
        snap.beta_rlm = config_.beta_rlm;
        snap.beta_p_ratio = beta_p_ratio_;
        return snap;
    }
    TimeStep ts;
    ts.t = t_ + 1;
    ts.y = y;
    ts.x_by_model = next_designs();
    return step(ts);
}

namespace {

struct Scored {
    double score = 0.0;
    double dscore = 0.0;
    bool ok = true;
    std::string why;
};

Scored score_under(const NigParams &params, const Observation &obs, double beta) {
    Scored s;
    try {
        StudentTPredictive pred = posterior_predictive(params, obs.x);
        s.score = beta_predictive_score_centered(pred, obs.y, beta);
        s.dscore = beta_score_log_derivative_centered(pred, obs.y, beta);
    } catch (const DomainError &e) {
        s.ok = false;
        s.why = e.what();
        return s;
    }
    if (!std::isfinite(s.score) || !std::isfinite(s.dscore)) {
        s.ok = false;
        s.why = "non-finite score";
    }
    return s;
}

// Longer run length wins ties: fewer changepoints.
bool better_map(const RunLengthEntry &a, const RunLengthEntry &b) {
    if (a.map_log != b.map_log) return a.map_log > b.map_log;
    return a.r > b.r;
}

} // namespace

DetectorSnapshot Detector::step(const TimeStep &step) {
    step.validate();
    if (step.y.size() != d_) throw UsageError("observation dimension changed mid-stream");
    const std::size_t t = t_ + 1;
    const double beta = config_.beta_rlm;
    const std::size_t n_models = config_.models.size();

    std::vector<Observation> obs(n_models);
    for (std::size_t k = 0; k < n_models; ++k) {
        obs[k] = step.for_model(config_.models[k].id);
        if (obs[k].x.cols() != config_.models[k].prior.p()) {
            throw UsageError("design for model " + std::to_string(config_.models[k].id) + " has the wrong width");
        }
    }

    DetectorSnapshot snap;
    snap.t = t;
    {
        std::map<int, Matrix> designs;
        for (std::size_t k = 0; k < n_models; ++k) designs.emplace(config_.models[k].id, obs[k].x);
        auto [yhat, dyhat] = predict_with_derivative(designs);
        snap.prediction = yhat;
        snap.prediction_drlm = dyhat;
        snap.prediction_error = step.y - yhat;
    }

    std::vector<std::size_t> model_index(entries_.size());
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        for (std::size_t k = 0; k < n_models; ++k) {
            if (config_.models[k].id == entries_[i].model) model_index[i] = k;
        }
    }

    // prior-predictive scores open every new segment
    std::vector<Scored> fresh(n_models);
    for (std::size_t k = 0; k < n_models; ++k) fresh[k] = score_under(config_.models[k].prior, obs[k], beta);

    std::vector<Scored> scored(entries_.size());
    const long n_entries = static_cast<long>(entries_.size());
#pragma omp parallel for schedule(static) if (config_.parallel)
    for (long i = 0; i < n_entries; ++i) {
        const auto idx = static_cast<std::size_t>(i);
        scored[idx] = score_under(entries_[idx].svrg.theta, obs[model_index[idx]], beta);
    }

    std::vector<RunLengthEntry> survivors;
    std::vector<std::size_t> survivor_model;
    survivors.reserve(entries_.size());
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (!scored[i].ok) {
            std::ostringstream os;
            os << "t=" << t << ": dropped hypothesis r=" << entries_[i].r << " model=" << entries_[i].model << " ("
               << scored[i].why << ")";
            snap.diagnostics.push_back(os.str());
            continue;
        }
        survivors.push_back(std::move(entries_[i]));
        survivor_model.push_back(model_index[i]);
        scored[survivors.size() - 1] = scored[i];
    }
    scored.resize(survivors.size());

    // changepoint mass: ordered reduction over the predecessors
    double cp_log = kNegInf;
    double cp_dlog = 0.0;
    const RunLengthEntry *best = nullptr;
    if (!survivors.empty()) {
        std::vector<double> lj(survivors.size());
        for (std::size_t i = 0; i < survivors.size(); ++i) {
            lj[i] = survivors[i].log_joint + hazard_log(config_.hazard, survivors[i].r, 0);
        }
        cp_log = log_sum_exp(lj);
        for (std::size_t i = 0; i < survivors.size(); ++i) cp_dlog += std::exp(lj[i] - cp_log) * survivors[i].dlog_drlm;
        for (const auto &e : survivors) {
            if (!best || better_map(e, *best)) best = &e;
        }
    }

    std::vector<RunLengthEntry> next;
    next.reserve(survivors.size() + n_models);
    std::vector<std::size_t> next_model;
    for (std::size_t k = 0; k < n_models; ++k) {
        if (!fresh[k].ok) {
            snap.diagnostics.push_back("t=" + std::to_string(t) + ": prior predictive of model " +
                                       std::to_string(config_.models[k].id) + " failed (" + fresh[k].why + ")");
            continue;
        }
        RunLengthEntry e;
        e.r = 0;
        e.model = config_.models[k].id;
        e.birth = t;
        e.svrg = SvrgState::fresh(config_.models[k].prior, config_.seed, e.model, t);
        if (t_ == 0 || best == nullptr) {
            // first observation, or nothing survived to condition on
            e.log_joint = log_q(k) + fresh[k].score;
            e.dlog_drlm = fresh[k].dscore;
            e.map_log = e.log_joint;
            e.map_chain = std::make_shared<const SegmentNode>(SegmentNode{t, nullptr});
        } else {
            e.log_joint = log_q(k) + fresh[k].score + cp_log;
            e.dlog_drlm = fresh[k].dscore + cp_dlog;
            e.map_log = log_q(k) + fresh[k].score + hazard_log(config_.hazard, best->r, 0) + best->map_log;
            e.map_chain = std::make_shared<const SegmentNode>(SegmentNode{t, best->map_chain});
        }
        next.push_back(std::move(e));
        next_model.push_back(k);
    }

    last_odds_.clear();
    last_odds_.reserve(survivors.size());
    for (std::size_t i = 0; i < survivors.size(); ++i) {
        auto &e = survivors[i];
        const std::size_t k = survivor_model[i];
        const double grow = hazard_log(config_.hazard, e.r, e.r + 1);
        const double cp = hazard_log(config_.hazard, e.r, 0);
        last_odds_.push_back({e.r, e.model, e.log_joint + scored[i].score + grow, e.log_joint + fresh[k].score + cp});
        e.log_joint += scored[i].score + grow;
        e.dlog_drlm += scored[i].dscore;
        e.map_log += scored[i].score + grow;
        e.r += 1;
        next.push_back(std::move(e));
        next_model.push_back(k);
    }
    score_offset_ += 1.0 / beta;
    dlog_offset_ -= 1.0 / (beta * beta);

    // the window buffers take y_t before any posterior refresh
    for (std::size_t k = 0; k < n_models; ++k) {
        windows_[k].push_front(obs[k]);
        if (windows_[k].size() > static_cast<std::size_t>(config_.svrg.W)) windows_[k].pop_back();
    }

    std::vector<std::string> failures(next.size());
    const long n_next = static_cast<long>(next.size());
#pragma omp parallel for schedule(dynamic) if (config_.parallel)
    for (long i = 0; i < n_next; ++i) {
        const auto idx = static_cast<std::size_t>(i);
        try {
            svrg_observe(next[idx].svrg, config_.svrg, next[idx].r, window_for(next_model[idx], next[idx].r));
        } catch (const std::exception &e) {
            failures[idx] = e.what();
        }
    }
    entries_.clear();
    for (std::size_t i = 0; i < next.size(); ++i) {
        if (!failures[i].empty()) {
            snap.diagnostics.push_back("t=" + std::to_string(t) + ": dropped hypothesis r=" + std::to_string(next[i].r) +
                                       " model=" + std::to_string(next[i].model) + " (" + failures[i] + ")");
            continue;
        }
        entries_.push_back(std::move(next[i]));
    }
    std::sort(entries_.begin(), entries_.end(), [](const RunLengthEntry &a, const RunLengthEntry &b) {
        return a.model != b.model ? a.model < b.model : a.r < b.r;
    });

    history_.push_front(step.y);
    if (history_.size() > history_len_) history_.pop_back();
    t_ = t;

    if (config_.prune_k > 0) prune(config_.prune_k);

    snap.log_evidence = log_evidence();
    snapshot_posteriors(snap);
    snap.map_changepoints = map_segmentation();
    snap.beta_rlm = config_.beta_rlm;
    snap.beta_p_ratio = beta_p_ratio_;
    return snap;
}

void Detector::prune(std::size_t k) {
    if (k < 1) throw UsageError("prune size must be >= 1");
    std::vector<RunLengthEntry> kept;
    kept.reserve(entries_.size());
    std::size_t begin = 0;
    while (begin < entries_.size()) {
        std::size_t end = begin;
        while (end < entries_.size() && entries_[end].model == entries_[begin].model) ++end;
        std::vector<std::size_t> order;
        for (std::size_t i = begin; i < end; ++i) {
            if (entries_[i].r != 0) order.push_back(i);
        }
        if (order.size() > k) {
            std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                return entries_[a].log_joint > entries_[b].log_joint;
            });
            order.resize(k);
        }
        std::vector<bool> keep(end - begin, false);
        for (std::size_t i : order) keep[i - begin] = true;
        for (std::size_t i = begin; i < end; ++i) {
            if (entries_[i].r == 0 || keep[i - begin]) kept.push_back(std::move(entries_[i]));
        }
        begin = end;
    }
    entries_ = std::move(kept);
}

std::vector<std::size_t> Detector::map_segmentation() const {
    const RunLengthEntry *best = nullptr;
    for (const auto &e : entries_) {
        if (!best || better_map(e, *best)) best = &e;
    }
    std::vector<std::size_t> cps;
    if (!best) return cps;
    for (const SegmentNode *node = best->map_chain.get(); node; node = node->prev.get()) {
        if (node->start > first_t_) cps.push_back(node->start);
    }
    std::reverse(cps.begin(), cps.end());
    return cps;
}

double Detector::log_evidence() const {
    if (entries_.empty()) return kNegInf;
    std::vector<double> lj;
    lj.reserve(entries_.size());
    for (const auto &e : entries_) lj.push_back(e.log_joint);
    return log_sum_exp(lj) + score_offset_;
}

std::vector<double> Detector::log_posterior() const {
    std::vector<double> lj;
    lj.reserve(entries_.size());
    for (const auto &e : entries_) lj.push_back(e.log_joint);
    if (lj.empty()) return lj;
    const double z = log_sum_exp(lj);
    for (double &v : lj) v -= z;
    return lj;
}

double Detector::log_evidence_drlm() const {
    const std::vector<double> lp = log_posterior();
    double out = dlog_offset_;
    for (std::size_t i = 0; i < entries_.size(); ++i) out += std::exp(lp[i]) * entries_[i].dlog_drlm;
    return out;
}

std::vector<double> Detector::log_posterior_drlm() const {
    const std::vector<double> lp = log_posterior();
    double mean = 0.0;
    for (std::size_t i = 0; i < entries_.size(); ++i) mean += std::exp(lp[i]) * entries_[i].dlog_drlm;
    std::vector<double> out;
    out.reserve(entries_.size());
    for (const auto &e : entries_) out.push_back(e.dlog_drlm - mean);
    return out;
}

Vector Detector::predict() const { return predict_with_derivative().first; }

std::pair<Vector, Vector> Detector::predict_with_derivative() const { return predict_with_derivative(next_designs()); }

std::pair<Vector, Vector> Detector::predict_with_derivative(const std::map<int, Matrix> &designs) const {
    Vector yhat = Vector::Zero(d_);
    Vector dyhat = Vector::Zero(d_);
    if (entries_.empty()) {
        // nothing seen yet: the model-prior mixture of prior locations
        for (std::size_t k = 0; k < config_.models.size(); ++k) {
            const ModelSpec &m = config_.models[k];
            yhat += std::exp(log_q(k)) * (designs.at(m.id) * m.prior.mu);
        }
        return {yhat, dyhat};
    }
    const std::vector<double> lp = log_posterior();
    const std::vector<double> dlp = log_posterior_drlm();
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const Vector loc = designs.at(entries_[i].model) * entries_[i].svrg.theta.mu;
        const double w = std::exp(lp[i]);
        yhat += w * loc;
        dyhat += w * dlp[i] * loc;
    }
    return {yhat, dyhat};
}

void Detector::snapshot_posteriors(DetectorSnapshot &snap) const {
    const std::vector<double> lp = log_posterior();
    for (const auto &m : config_.models) snap.model_posterior[m.id] = 0.0;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const double w = std::exp(lp[i]);
        snap.run_length_posterior[{entries_[i].r, entries_[i].model}] = w;
        snap.model_posterior[entries_[i].model] += w;
    }
}

std::size_t Detector::state_bytes() const {
    std::size_t total = sizeof(Detector);
    for (const auto &e : entries_) total += sizeof(RunLengthEntry) + e.svrg.bytes() + sizeof(SegmentNode);
    for (const auto &w : windows_) {
        for (const auto &o : w) total += sizeof(Observation) + sizeof(double) * static_cast<std::size_t>(o.y.size() + o.x.size());
    }
    total += history_.size() * (sizeof(Vector) + sizeof(double) * static_cast<std::size_t>(d_));
    return total;
}

namespace {

void require_positive(double v, const char *what) {
    if (!(v > 0.0) || !std::isfinite(v)) throw DomainError(std::string("bound term ") + what + " must be positive");
}

// log of the lower bound on the log odds, minus the |V|_min term
struct BoundParts {
    double constant;  // log((1-H)/H) - max prior-predictive score
    double log_slope; // log of S / ((1+beta) pi^{beta p / 2})
};

BoundParts bound_parts(const NigParams &prior, int p, double beta, const HazardSpec &hazard, double det) {
    if (p < 1) throw UsageError("bound dimension p must be >= 1");
    hazard.validate();
    require_positive(beta, "beta_rlm");
    require_positive(det, "|I + X Sigma0 X^T|");
    const double a0 = prior.a;
    const double b0 = prior.b;
    const double pp = static_cast<double>(p);
    require_positive(a0, "Gamma(a0)");
    require_positive(a0 + pp / 2, "Gamma(a0 + p/2)");
    const double eta_half = beta * a0 + beta * pp / 2 + a0;
    require_positive(eta_half, "Gamma(beta a0 + beta p/2 + a0)");
    require_positive(b0, "b0");

    // prior mode density and the gamma ratio of the prior power integral
    const double log_mode = std::lgamma(a0 + pp / 2) - std::lgamma(a0) - pp / 2 * std::log(2 * b0 * std::numbers::pi) -
                            0.5 * std::log(det);
    const double log_g = std::lgamma(a0 + pp / 2) + std::lgamma(eta_half) - std::lgamma(a0) -
                         std::lgamma(eta_half + pp / 2);
    const double mode_beta = std::exp(beta * log_mode);
    const double max_prior_score = mode_beta * (1.0 / beta - std::exp(log_g) / (1.0 + beta));
    const double h = hazard.h();
    const double odds = std::log1p(-h) - std::log(h);

    double log_s = 0.0;
    if (p > 1) log_s = beta * pp / 2 * std::log1p(pp) + beta * (1.0 / (6 * (1 + pp)) - pp / 2);
    return {odds - max_prior_score, log_s - std::log1p(beta) - beta * pp / 2 * std::log(std::numbers::pi)};
}

} // namespace

BoundCheck check_cp_bound(const NigParams &prior, int p, double beta_rlm, const HazardSpec &hazard, double v_min,
                          double det_prior_scale) {
    if (!(v_min > 0.0)) throw UsageError("v_min must be positive");
    const BoundParts parts = bound_parts(prior, p, beta_rlm, hazard, det_prior_scale);
    BoundCheck out;
    out.bound_value = parts.constant - std::exp(parts.log_slope - beta_rlm / 2 * std::log(v_min));
    out.holds = out.bound_value >= 0.0;
    return out;
}

double cp_bound_threshold(const NigParams &prior, int p, double beta_rlm, const HazardSpec &hazard,
                          double det_prior_scale) {
    const BoundParts parts = bound_parts(prior, p, beta_rlm, hazard, det_prior_scale);
    if (!(parts.constant > 0.0)) return std::numeric_limits<double>::infinity();
    // constant = exp(log_slope) |V|^{-beta/2}
    return std::exp(-2.0 / beta_rlm * (std::log(parts.constant) - parts.log_slope));
}

} // namespace rbocpd
