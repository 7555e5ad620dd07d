#include "rbocpd/presets.hpp"

#include <cmath>
#include <random>

namespace rbocpd {

std::vector<std::string> preset_names() { return {"well-log", "fig1b", "air-pollution-like"}; }

namespace {

ModelSpec model(int id, int lag, DesignKind kind, double a0, double b0, const Vector &mu0, const Matrix &sigma0,
                double beta_p) {
    ModelSpec m;
    m.id = id;
    m.lag = lag;
    m.design = kind;
    m.prior = NigParams::from_covariance(a0, b0, mu0, sigma0);
    m.beta_p = beta_p;
    return m;
}

Matrix diag(std::initializer_list<double> v) {
    Vector d(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) d(i++) = x;
    return d.asDiagonal();
}

Preset well_log(std::uint64_t seed) {
    Preset p;
    p.name = "well-log";
    SimulationSpec &s = p.simulation;
    s.T = 4050;
    s.d = 1;
    s.seed = seed;
    s.burn_in = 0;
    s.noise = {{NoiseKind::gaussian, 0.0, 1000.0}};
    s.contamination = 0.01;
    s.contamination_noise = {NoiseKind::student_t, 1.0, 3000.0};
    // a logging tool reads within a finite range
    s.range_low = 0.0;
    s.range_high = 4e4;
    // piecewise constant strata: level jumps of 3 to 8 noise sd, kept
    // within 1e4 of 1.15e4
    std::mt19937_64 rng(seed ^ 0x5eedULL);
    std::uniform_int_distribution<int> len(250, 600);
    std::uniform_real_distribution<double> jump(3000.0, 8000.0);
    std::bernoulli_distribution down(0.5);
    double level = 1.15e4;
    for (std::size_t start = 1; start <= s.T; start += static_cast<std::size_t>(len(rng))) {
        if (start > 1) {
            double j = jump(rng);
            if (down(rng)) j = -j;
            if (std::abs(level + j - 1.15e4) > 1e4) j = -j;
            level += j;
        }
        SegmentSpec seg;
        seg.start = start;
        seg.intercept = Vector::Constant(1, level);
        s.segments.push_back(seg);
    }

    DetectorConfig &c = p.detector;
    c.models = {model(0, 0, DesignKind::per_stream, 1.0, 1e7, Vector::Constant(1, 1.15e4), diag({0.25}), 0.01)};
    c.hazard.lambda = 100.0;
    c.prune_k = 50;
    c.svrg = SvrgHyper{};
    c.svrg.W = 360;
    c.svrg.B_star = 25;
    c.svrg.b_star = 10;
    c.svrg.m = 20;
    c.svrg.K = 1;
    c.beta_rlm = 0.1;
    p.beta.beta_rlm = c.beta_rlm;
    p.beta.beta_p = 0.01;
    p.beta.clip_rlm = 5.0 / static_cast<double>(s.T);
    p.loss.tau_l = 3e4;
    return p;
}

Preset fig1b(std::uint64_t seed) {
    Preset p;
    p.name = "fig1b";
    SimulationSpec &s = p.simulation;
    s.T = 600;
    s.d = 5;
    s.seed = seed;
    s.noise = {{}, {}, {}, {}, {NoiseKind::student_t, 4.0, 1.5}};
    const Matrix eye = Matrix::Identity(5, 5);
    s.segments = {{1, Vector::Zero(5), {0.5 * eye}},
                  {200, Vector::Constant(5, 1.5), {-0.3 * eye}},
                  {400, Vector::Constant(5, -1.0), {0.7 * eye}}};

    DetectorConfig &c = p.detector;
    const Matrix sigma0 = diag({100.0, 5.0});
    c.models = {model(0, 1, DesignKind::pooled, 3.0, 5.0, Vector::Zero(2), sigma0, 0.05)};
    c.hazard.lambda = 100.0;
    c.prune_k = 50;
    c.svrg.W = 200;
    c.beta_rlm = 0.15;
    p.beta.beta_rlm = c.beta_rlm;
    p.beta.beta_p = 0.05;
    p.beta.clip_rlm = 5.0 / static_cast<double>(s.T);
    return p;
}

Preset air_pollution_like(std::uint64_t seed) {
    Preset p;
    p.name = "air-pollution-like";
    SimulationSpec &s = p.simulation;
    s.T = 1000;
    s.d = 29;
    s.seed = seed;
    s.noise = {{NoiseKind::student_t, 5.0, 1.0}};
    s.contamination = 0.005;
    s.contamination_noise = {NoiseKind::student_t, 1.0, 5.0};
    const Matrix eye = Matrix::Identity(29, 29);
    s.segments = {{1, Vector::Constant(29, 2.0), {0.6 * eye}},
                  {350, Vector::Constant(29, 1.0), {0.6 * eye}},
                  {700, Vector::Constant(29, 2.5), {0.3 * eye, 0.2 * eye}}};

    DetectorConfig &c = p.detector;
    c.models = {model(0, 1, DesignKind::pooled, 3.0, 5.0, Vector::Zero(2), diag({100.0, 5.0}), 0.005),
                model(1, 2, DesignKind::pooled, 3.0, 5.0, Vector::Zero(3), diag({100.0, 5.0, 5.0}), 0.005)};
    c.hazard.lambda = 100.0;
    c.prune_k = 30;
    c.svrg.W = 200;
    c.beta_rlm = 0.05;
    p.beta.beta_rlm = c.beta_rlm;
    p.beta.beta_p = 0.005;
    p.beta.clip_rlm = 5.0 / static_cast<double>(s.T);
    return p;
}

} // namespace

Preset make_preset(const std::string &name, std::uint64_t seed) {
    if (name == "well-log") return well_log(seed);
    if (name == "fig1b") return fig1b(seed);
    if (name == "air-pollution-like") return air_pollution_like(seed);
    throw UsageError("unknown preset '" + name + "'");
}

DetectorConfig kld_limit(DetectorConfig cfg) {
    cfg.beta_rlm = 1e-8;
    for (auto &m : cfg.models) m.beta_p = 1e-8;
    return cfg;
}

} // namespace rbocpd
