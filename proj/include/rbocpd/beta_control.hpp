#ifndef RBOCPD_BETA_CONTROL_HPP
#define RBOCPD_BETA_CONTROL_HPP

#include "rbocpd/detector.hpp"

#include <array>
#include <limits>
#include <optional>

namespace rbocpd {

/// Which part of KL(posterior || prior) is read as the influence. The
/// variance block also reacts to observations that are too close to the
/// mean, which in higher d dominates the curve near zero.
enum class InfluenceBlock { location, full };

/// Where the influence of a single observation is probed.
struct InfluenceProbe {
    /// Mahalanobis distance at which influence should peak
    double target_md = 3.0;
    std::vector<double> grid;
    /// number of directions averaged when d > 1; the first is always the
    /// all-ones direction
    int mc_samples = 1;
    std::uint64_t seed = 0;
    InfluenceBlock block = InfluenceBlock::location;

    /// Evenly spaced grid on (0, span * target].
    static InfluenceProbe around(double target_md, int points = 200, double span = 4.0);
    void validate() const;
};

struct InfluenceParts {
    /// KL(posterior || prior)
    double total = 0.0;
    /// the part of the KL carried by the mean
    double location = 0.0;
};

/// Divergence between the prior and the beta_p posterior after one
/// observation placed `md` prior-predictive Mahalanobis units from the
/// prior predictive location. `md` may be zero.
InfluenceParts influence_parts(double beta_p, const NigParams &prior, const Matrix &x, double md,
                               const InfluenceProbe &probe);
/// The probe's block of influence_parts.
double influence_at(double beta_p, const NigParams &prior, const Matrix &x, double md, const InfluenceProbe &probe);

/// Influence over the probe grid.
std::vector<double> influence_curve(double beta_p, const NigParams &prior, const Matrix &x,
                                    const InfluenceProbe &probe);

struct InitResult {
    double beta_p = 0.0;
    /// no beta_p in range puts the influence peak at the target
    bool at_boundary = false;
    std::size_t target_index = 0;
    std::vector<double> curve;
};

/// Default target: k prior-predictive sd for d <= 3, sqrt(d) otherwise.
double default_target_md(Eigen::Index d, double k = 3.0);

/// beta_p in [eps_min, 2] whose influence peak over the grid sits at the grid
/// point nearest the target. Returns the geometric midpoint of the beta_p
/// interval that maps onto that grid point.
InitResult init_beta_p(const NigParams &prior, const Matrix &x, Eigen::Index d, const InfluenceProbe &probe,
                       double eps_min = 1e-10);

/// Bounded absolute loss min(|e|_1, tau_L). The step clips live in BetaState.
struct LossSpec {
    double tau_l = std::numeric_limits<double>::infinity();
    /// relative perturbation of beta_p for the shadow detectors
    double fd_step = 0.1;

    double loss(const Vector &err) const;
    /// d loss / d yhat
    Vector dloss_dyhat(const Vector &err) const;
    void validate() const;
};

struct BetaUpdate {
    BetaState state;
    bool stepped_rlm = false;
    bool stepped_p = false;
    double step_rlm = 0.0;
    double step_p = 0.0;
};

/**
 * One observation's worth of tuning. Gradients are buffered and the mean of
 * a full buffer is applied as a single clipped step. `dyhat_dp` is absent
 * when the beta_p gradient could not be formed this step.
 */
BetaUpdate online_beta_update(BetaState beta, const LossSpec &loss, std::size_t t, const Vector &err,
                              const Vector &dyhat_drlm, const std::optional<Vector> &dyhat_dp);

/// Main detector plus two shadows at beta_p (1 +- fd_step) that supply the
/// beta_p derivative of the forecast.
class BetaTuner {
public:
    BetaTuner(DetectorConfig config, Eigen::Index d, BetaState beta, LossSpec loss, bool tune = true);

    DetectorSnapshot observe(const Vector &y);

    const Detector &detector() const { return main_; }
    const BetaState &beta() const { return beta_; }
    const std::vector<std::string> &log() const { return log_; }

private:
    void push_betas();

    double beta_p0_;
    Detector main_;
    std::array<Detector, 2> shadows_;
    BetaState beta_;
    LossSpec loss_;
    bool tune_;
    std::vector<std::string> log_;
};

} // namespace rbocpd

#endif
