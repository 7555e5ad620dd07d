#include "rbocpd/simulate.hpp"

#include <Eigen/Eigenvalues>

#include <random>
#include <sstream>

namespace rbocpd {

double spectral_radius(const std::vector<Matrix> &ar, Eigen::Index d) {
    if (ar.empty()) return 0.0;
    const Eigen::Index k = static_cast<Eigen::Index>(ar.size());
    Matrix comp = Matrix::Zero(d * k, d * k);
    for (Eigen::Index l = 0; l < k; ++l) comp.block(0, l * d, d, d) = ar[static_cast<std::size_t>(l)];
    if (k > 1) comp.block(d, 0, d * (k - 1), d * (k - 1)).setIdentity();
    Eigen::EigenSolver<Matrix> es(comp, false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

void SimulationSpec::validate() const {
    if (T == 0 || d < 1) throw UsageError("T and d must be positive");
    if (segments.empty() || segments.front().start != 1) throw UsageError("the first segment must start at t = 1");
    for (std::size_t s = 0; s < segments.size(); ++s) {
        const SegmentSpec &seg = segments[s];
        if (s > 0 && seg.start <= segments[s - 1].start) throw UsageError("segment starts must increase");
        if (seg.intercept.size() != d) throw UsageError("segment intercept must have length d");
        for (const Matrix &a : seg.ar) {
            if (a.rows() != d || a.cols() != d) throw UsageError("AR coefficient blocks must be d x d");
        }
        const double rho = spectral_radius(seg.ar, d);
        if (!(rho < 1.0)) {
            std::ostringstream msg;
            msg << "segment " << s << " (start " << seg.start << ") is not stationary: spectral radius " << rho;
            for (std::size_t l = 0; l < seg.ar.size(); ++l) msg << "\nA_" << l + 1 << " =\n" << seg.ar[l];
            throw UsageError(msg.str());
        }
    }
    if (noise.size() != 1 && noise.size() != static_cast<std::size_t>(d)) {
        throw UsageError("noise needs one spec or one per stream");
    }
    for (const NoiseSpec &n : noise) {
        if (!(n.scale > 0.0) || (n.kind == NoiseKind::student_t && !(n.dof > 0.0))) throw UsageError("bad noise spec");
    }
    if (!(contamination >= 0.0 && contamination <= 1.0)) throw UsageError("contamination must be a probability");
    if (contaminated_stream >= d) throw UsageError("contaminated stream out of range");
    if (!(range_low < range_high)) throw UsageError("empty reading range");
}

namespace {

double draw(const NoiseSpec &n, std::mt19937_64 &rng) {
    if (n.kind == NoiseKind::gaussian) return n.scale * std::normal_distribution<double>()(rng);
    return n.scale * std::student_t_distribution<double>(n.dof)(rng);
}

} // namespace

SimulatedStream simulate(const SimulationSpec &spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unif;
    const Eigen::Index d = spec.d;
    std::size_t max_lag = 0;
    for (const auto &s : spec.segments) max_lag = std::max(max_lag, s.ar.size());

    SimulatedStream out;
    std::vector<Vector> past; // newest last
    std::size_t seg = 0;
    const long total = static_cast<long>(spec.burn_in + spec.T);
    for (long i = 0; i < total; ++i) {
        const long t = i - static_cast<long>(spec.burn_in) + 1;
        if (t >= 1) {
            while (seg + 1 < spec.segments.size() && spec.segments[seg + 1].start <= static_cast<std::size_t>(t)) {
                ++seg;
                out.changepoints.push_back(static_cast<std::size_t>(t));
            }
        }
        const SegmentSpec &s = spec.segments[seg];
        Vector y = s.intercept;
        for (std::size_t l = 0; l < s.ar.size() && l < past.size(); ++l) y += s.ar[l] * past[past.size() - 1 - l];
        for (Eigen::Index j = 0; j < d; ++j) {
            y(j) += draw(spec.noise.size() == 1 ? spec.noise[0] : spec.noise[static_cast<std::size_t>(j)], rng);
        }
        Vector clean = y;
        if (t >= 1 && spec.contamination > 0.0) {
            bool hit = false;
            for (Eigen::Index j = 0; j < d; ++j) {
                if (spec.contaminated_stream >= 0 && j != spec.contaminated_stream) continue;
                if (unif(rng) < spec.contamination) {
                    y(j) += draw(spec.contamination_noise, rng);
                    hit = true;
                }
            }
            if (hit) out.outliers.push_back(static_cast<std::size_t>(t));
        }
        y = y.cwiseMax(spec.range_low).cwiseMin(spec.range_high);
        // outliers do not feed the AR recursion
        past.push_back(clean);
        if (past.size() > max_lag) past.erase(past.begin());
        if (t >= 1) out.y.push_back(y);
    }
    return out;
}

} // namespace rbocpd
