#include "rbocpd/presets.hpp"

#include <doctest.h>

#include <cmath>

using namespace rbocpd;

namespace {

SimulationSpec white_noise(std::size_t T, std::uint64_t seed) {
    SimulationSpec s;
    s.T = T;
    s.d = 2;
    s.seed = seed;
    s.noise = {{}};
    s.segments = {{1, Vector::Zero(2), {Matrix::Zero(2, 2)}}};
    return s;
}

} // namespace

TEST_CASE("explosive AR coefficients are rejected") {
    SimulationSpec s = white_noise(10, 1);
    s.segments[0].ar = {Matrix::Identity(2, 2) * 1.01};
    CHECK_THROWS_AS(s.validate(), UsageError);
    s.segments[0].ar = {0.5 * Matrix::Identity(2, 2), 0.6 * Matrix::Identity(2, 2)};
    CHECK_THROWS_AS(s.validate(), UsageError);
    s.segments[0].ar = {0.5 * Matrix::Identity(2, 2), 0.3 * Matrix::Identity(2, 2)};
    CHECK_NOTHROW(s.validate());
}

TEST_CASE("companion spectral radius") {
    CHECK(spectral_radius({}, 3) == 0.0);
    Matrix a(1, 1);
    a << -0.8;
    CHECK(spectral_radius({a}, 1) == doctest::Approx(0.8));
    // y_t = y_{t-1} - 0.5 y_{t-2}: roots of z^2 - z + 0.5
    Matrix b(1, 1);
    b << -0.5;
    CHECK(spectral_radius({Matrix::Ones(1, 1), b}, 1) == doctest::Approx(std::sqrt(0.5)));
}

TEST_CASE("same seed, same stream") {
    auto a = simulate(make_preset("fig1b", 7).simulation);
    auto b = simulate(make_preset("fig1b", 7).simulation);
    auto c = simulate(make_preset("fig1b", 8).simulation);
    REQUIRE(a.y.size() == 600);
    bool same = true;
    bool differs = false;
    for (std::size_t t = 0; t < a.y.size(); ++t) {
        same = same && a.y[t] == b.y[t];
        differs = differs || a.y[t] != c.y[t];
    }
    CHECK(same);
    CHECK(differs);
}

TEST_CASE("zero-coefficient AR reduces to its intercept plus noise") {
    const std::size_t T = 4000;
    auto s = simulate(white_noise(T, 3));
    Vector mean = Vector::Zero(2);
    for (const auto &y : s.y) mean += y;
    mean /= static_cast<double>(T);
    CHECK(mean.cwiseAbs().maxCoeff() < 4.0 / std::sqrt(static_cast<double>(T)));
    CHECK(s.changepoints.empty());
    CHECK(s.outliers.empty());
}

TEST_CASE("fig1b changes regime at 200 and 400") {
    auto s = simulate(make_preset("fig1b", 1).simulation);
    CHECK(s.changepoints == std::vector<std::size_t>{200, 400});
}

TEST_CASE("well-log readings stay in range and segments are long") {
    auto p = make_preset("well-log", 2);
    auto s = simulate(p.simulation);
    REQUIRE(s.y.size() == 4050);
    for (const auto &y : s.y) {
        CHECK(y(0) >= 0.0);
        CHECK(y(0) <= 4e4);
    }
    std::size_t last = 1;
    for (std::size_t cp : s.changepoints) {
        CHECK(cp - last >= 250);
        last = cp;
    }
    CHECK(!s.outliers.empty());
}

TEST_CASE("contamination can be limited to one stream") {
    SimulationSpec s = white_noise(2000, 5);
    s.contamination = 0.05;
    s.contamination_noise = {NoiseKind::gaussian, 0.0, 1e6};
    s.contaminated_stream = 1;
    auto out = simulate(s);
    REQUIRE(!out.outliers.empty());
    for (const auto &y : out.y) CHECK(std::abs(y(0)) < 10.0);
}

TEST_CASE("presets build and validate") {
    for (const auto &name : preset_names()) {
        auto p = make_preset(name, 1);
        CHECK_NOTHROW(p.simulation.validate());
        CHECK_NOTHROW(p.detector.validate(p.simulation.d));
    }
    CHECK_THROWS_AS(make_preset("nope"), UsageError);
    auto k = kld_limit(make_preset("fig1b").detector);
    CHECK(k.beta_rlm == 1e-8);
    CHECK(k.models[0].beta_p == 1e-8);
}
