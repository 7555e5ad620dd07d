#ifndef RBOCPD_SIMULATE_HPP
#define RBOCPD_SIMULATE_HPP

#include "rbocpd/core.hpp"

#include <cstdint>
#include <limits>
#include <vector>

namespace rbocpd {

enum class NoiseKind { gaussian, student_t };

struct NoiseSpec {
    NoiseKind kind = NoiseKind::gaussian;
    double dof = 4.0;
    double scale = 1.0;
};

/// One regime of a vector AR process y_t = c + sum_l A_l y_{t-l} + noise.
struct SegmentSpec {
    /// first time index (1-based) of the segment
    std::size_t start = 1;
    Vector intercept;
    std::vector<Matrix> ar;
};

struct SimulationSpec {
    std::size_t T = 600;
    Eigen::Index d = 1;
    std::vector<SegmentSpec> segments;
    /// one per stream, or a single spec shared by all
    std::vector<NoiseSpec> noise;
    /// probability that an observation of the contaminated stream(s) gets an
    /// extra draw from `contamination_noise`
    double contamination = 0.0;
    NoiseSpec contamination_noise{NoiseKind::student_t, 1.0, 1.0};
    /// -1 contaminates every stream
    int contaminated_stream = -1;
    /// readings are clamped into [range_low, range_high], like a sensor with
    /// a finite range; the defaults leave them untouched
    double range_low = -std::numeric_limits<double>::infinity();
    double range_high = std::numeric_limits<double>::infinity();
    /// observations generated and thrown away before t = 1
    std::size_t burn_in = 100;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SimulatedStream {
    std::vector<Vector> y;
    std::vector<std::size_t> changepoints;
    /// times at which contamination was added
    std::vector<std::size_t> outliers;
};

/// Spectral radius of the companion matrix of a vector AR coefficient list.
double spectral_radius(const std::vector<Matrix> &ar, Eigen::Index d);

SimulatedStream simulate(const SimulationSpec &spec);

} // namespace rbocpd

#endif
