#ifndef RBOCPD_DETECTOR_HPP
#define RBOCPD_DETECTOR_HPP

#include "rbocpd/svrg.hpp"

#include <deque>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace rbocpd {

/// How a model turns the recent past into a design matrix.
///   per_stream: every coordinate has its own AR coefficients, intercept shared
///               (p = d * lag + intercept)
///   pooled:     one AR coefficient vector shared by all coordinates
///               (p = lag + intercept)
enum class DesignKind { per_stream, pooled };

struct ModelSpec {
    int id = 0;
    int lag = 0;
    bool include_intercept = true;
    DesignKind design = DesignKind::per_stream;
    NigParams prior;
    double beta_p = 0.05;

    Eigen::Index p(Eigen::Index d) const;

    /// Design for the next observation. `history` holds past observations,
    /// newest first; missing lags read as zero.
    Matrix design_matrix(const std::deque<Vector> &history, Eigen::Index d) const;
    void validate(Eigen::Index d) const;
};

/// Persistent list of segment start times, newest first.
struct SegmentNode {
    std::size_t start = 0;
    std::shared_ptr<const SegmentNode> prev;
};

struct RunLengthEntry {
    long r = 0;
    int model = 0;
    /// log p(y_{1:t}, r_t, m_t) minus the offset shared by every entry
    double log_joint = 0.0;
    SvrgState svrg;
    /// d log_joint / d beta_rlm minus the shared offset
    double dlog_drlm = 0.0;
    std::size_t birth = 0;
    /// log density of the best segmentation ending with this segment
    double map_log = 0.0;
    std::shared_ptr<const SegmentNode> map_chain;

    const NigParams &nig() const { return svrg.theta; }
};

struct DetectorConfig {
    std::vector<ModelSpec> models;
    /// q(m) for a fresh segment; empty means uniform
    std::vector<double> model_prior;
    HazardSpec hazard;
    /// entries kept per model besides r = 0; 0 disables pruning
    std::size_t prune_k = 50;
    SvrgHyper svrg;
    double beta_rlm = 0.1;
    std::uint64_t seed = 0;
    bool parallel = false;
    /// observe() uses the first max-lag observations only as lags for the
    /// designs that follow; otherwise missing lags read as zero
    bool condition_on_lags = true;

    void validate(Eigen::Index d) const;
};

/// Growth-versus-changepoint log odds of one predecessor at the last step.
struct OddsRecord {
    long r = 0;
    int model = 0;
    double growth_log = 0.0;
    double changepoint_log = 0.0;
};

struct DetectorSnapshot {
    std::size_t t = 0;
    std::map<std::pair<long, int>, double> run_length_posterior;
    std::map<int, double> model_posterior;
    /// one-step forecast of y_t made before y_t was seen
    Vector prediction;
    Vector prediction_error;
    /// d prediction / d beta_rlm
    Vector prediction_drlm;
    std::vector<std::size_t> map_changepoints;
    double log_evidence = 0.0;
    double beta_rlm = 0.0;
    double beta_p_ratio = 1.0;
    /// y_t only filled the lag history and was not scored
    bool warmup = false;
    std::vector<std::string> diagnostics;
};

class Detector {
public:
    Detector(DetectorConfig config, Eigen::Index d);

    /// Observe y_t, building designs from the stream's own past.
    DetectorSnapshot observe(const Vector &y);

    /// Observe y_t with caller-supplied designs for every model.
    DetectorSnapshot step(const TimeStep &step);

    /// Forecast of the next observation and its beta_rlm derivative, using
    /// the designs built from the stream's past.
    Vector predict() const;
    std::pair<Vector, Vector> predict_with_derivative() const;
    std::pair<Vector, Vector> predict_with_derivative(const std::map<int, Matrix> &designs) const;

    void prune(std::size_t k);
    std::vector<std::size_t> map_segmentation() const;

    /// log p(y_{1:t}) over the retained entries
    double log_evidence() const;
    /// d log p(y_{1:t}) / d beta_rlm
    double log_evidence_drlm() const;

    /// log p(r_t, m_t | y_{1:t}) and its beta_rlm derivative per entry
    std::vector<double> log_posterior() const;
    std::vector<double> log_posterior_drlm() const;

    const std::vector<RunLengthEntry> &entries() const { return entries_; }
    const std::vector<OddsRecord> &last_odds() const { return last_odds_; }
    const DetectorConfig &config() const { return config_; }
    std::size_t t() const { return t_; }
    Eigen::Index d() const { return d_; }

    double beta_rlm() const { return config_.beta_rlm; }
    void set_beta_rlm(double beta);
    /// every model's beta_p is its configured value times this ratio
    double beta_p_ratio() const { return beta_p_ratio_; }
    void set_beta_p_ratio(double ratio);

    std::map<int, Matrix> next_designs() const;
    std::size_t state_bytes() const;

private:
    double log_q(std::size_t model_index) const;
    ElboContext window_for(std::size_t model_index, long r) const;
    void snapshot_posteriors(DetectorSnapshot &snap) const;

    DetectorConfig config_;
    Eigen::Index d_;
    std::size_t t_ = 0;
    double beta_p_ratio_ = 1.0;
    std::vector<RunLengthEntry> entries_;
    std::vector<OddsRecord> last_odds_;
    std::deque<Vector> history_;
    std::size_t history_len_ = 0;
    /// time of the first scored observation
    std::size_t first_t_ = 1;
    std::vector<std::deque<Observation>> windows_;
    double score_offset_ = 0.0;
    double dlog_offset_ = 0.0;
};

struct BoundCheck {
    bool holds = false;
    /// lower bound on the growth-versus-changepoint log odds
    double bound_value = 0.0;
};

/// Robustness bound for a changepoint being declared on a single outlier.
/// `det_prior_scale` is |I + X Sigma0 X^T| of the prior predictive; 1 is the
/// worst case over designs.
BoundCheck check_cp_bound(const NigParams &prior, int p, double beta_rlm, const HazardSpec &hazard, double v_min,
                          double det_prior_scale = 1.0);

/// Smallest |V|_min for which the bound holds, +inf if none does.
double cp_bound_threshold(const NigParams &prior, int p, double beta_rlm, const HazardSpec &hazard,
                          double det_prior_scale = 1.0);

} // namespace rbocpd

#endif
