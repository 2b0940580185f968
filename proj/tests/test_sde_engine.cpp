#include "doctest.h"

#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>
#include <vector>

#include "hslab/quadrature.hpp"
#include "hslab/sde.hpp"
#include "hslab/stats.hpp"
#include "hslab/test_functions.hpp"

using namespace hslab;

namespace {

bool same_bits(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

SdeCoefficients brownian(int d) { return constant_coeffs(Eigen::MatrixXd::Identity(d, d), Eigen::VectorXd::Zero(d)); }

}  // namespace

TEST_CASE("time grid") {
    const TimeGrid g(1.0, 3);
    CHECK(g.time(3) == 1.0);
    CHECK(g.time(0) == 0.0);
    CHECK(g.dt() == 1.0 / 3);
    CHECK_THROWS_AS(TimeGrid(0.0, 3), std::invalid_argument);
    CHECK_THROWS_AS(TimeGrid(1.0, 0), std::invalid_argument);
}

TEST_CASE("sample_brownian is deterministic and thread-independent") {
    const TimeGrid g(1.0, 50);
    const auto a = sample_brownian(g, 2, 300, 42, 1);
    const auto b = sample_brownian(g, 2, 300, 42, 4);
    const auto c = sample_brownian(g, 2, 300, 43, 1);
    CHECK(same_bits(a.increments, b.increments));
    CHECK(!same_bits(a.increments, c.increments));
    // a prefix of paths does not depend on how many paths were drawn
    const auto shorter = sample_brownian(g, 2, 100, 42, 3);
    CHECK(same_bits(shorter.increments, a.increments.leftCols(100)));
    const auto q = sample_brownian(g, 2, 300, 42, 1, StreamKind::BrownianQ);
    CHECK(!same_bits(a.increments, q.increments));
}

TEST_CASE("increment moments match N(0, dt)") {
    const TimeGrid g(1.0, 100);
    const std::size_t M = 100000;
    const auto e = sample_brownian(g, 1, M, 7);
    const double dt = g.dt();
    // sample variance of M normals has sd dt*sqrt(2/(M-1))
    const double var_sd = dt * std::sqrt(2.0 / (M - 1));
    int outside = 0;
    for (int k = 0; k < g.steps; ++k) {
        const Eigen::ArrayXd row = e.increments.row(k).transpose().array();
        const double mean = row.mean();
        const double var = (row - mean).square().sum() / (M - 1);
        if (std::abs(mean) > 5 * std::sqrt(dt / M)) ++outside;
        if (std::abs(var - dt) > 5 * var_sd) ++outside;
    }
    CHECK(outside == 0);

    const Eigen::ArrayXd BT = e.increments.colwise().sum().transpose().array();
    const double var_T = (BT - BT.mean()).square().sum() / (M - 1);
    CHECK(std::abs(var_T - 1.0) <= 5 * std::sqrt(2.0 / (M - 1)));
}

TEST_CASE("simulate_base reproduces Brownian motion and deterministic drift") {
    const TimeGrid g(1.0, 64);
    const auto e = sample_brownian(g, 1, 200, 3);
    const auto z = simulate_base(brownian(1), Eigen::VectorXd::Zero(1), e);
    CHECK(same_bits(z.states, e.brownian_path()));
    CHECK(z.flagged_count() == 0);

    const auto drift = simulate_base(constant_coeffs(Eigen::MatrixXd::Zero(1, 1), Eigen::VectorXd::Ones(1)),
                                     Eigen::VectorXd::Zero(1), e);
    for (int k = 0; k <= g.steps; ++k) CHECK(drift.state(17, k, 0) == g.time(k));
}

TEST_CASE("Euler-Maruyama strong error for geometric Brownian motion") {
    // dZ = Z dB + Z dt, Z_0 = 1  =>  Z_T = exp(T/2 + B_T)
    SdeCoefficients gbm;
    gbm.dim = 1;
    gbm.sigma = [](const Eigen::VectorXd& z) { return Eigen::MatrixXd::Constant(1, 1, z(0)); };
    gbm.drift = [](const Eigen::VectorXd& z) { return z; };
    const TimeGrid fine(1.0, 1024);
    const std::size_t M = 4000;
    const auto base = sample_brownian(fine, 1, M, 11);
    const Eigen::RowVectorXd BT = base.increments.colwise().sum();
    std::vector<double> log_dt, log_err;
    for (int factor : {16, 32, 64, 128, 256}) {  // dt = 2^-6 .. 2^-2
        const auto z = simulate_base(gbm, Eigen::VectorXd::Ones(1), coarsen(base, factor));
        std::vector<double> err(M);
        for (std::size_t m = 0; m < M; ++m)
            err[m] = std::abs(z.state(m, z.grid.steps, 0) - std::exp(0.5 + BT(static_cast<Eigen::Index>(m))));
        log_dt.push_back(std::log2(z.grid.dt()));
        log_err.push_back(std::log2(mean_estimate(err).mean));
    }
    const auto fit = fit_slope(log_dt, log_err);
    MESSAGE("strong order " << fit.slope);
    CHECK(fit.slope > 0.35);
    CHECK(fit.slope < 0.8);
}

TEST_CASE("simulate_modified") {
    const TimeGrid g(1.0, 40);
    const auto e = sample_brownian(g, 2, 50, 5);
    Eigen::MatrixXd S(2, 2);
    S << 1.0, 0.3, -0.2, 0.8;
    SdeCoefficients nonlinear;
    nonlinear.dim = 2;
    nonlinear.sigma = [S](const Eigen::VectorXd& z) { return Eigen::MatrixXd(S * std::cos(z(0))); };
    nonlinear.drift = [](const Eigen::VectorXd& z) { return Eigen::VectorXd(-z); };
    const Eigen::VectorXd z0 = Eigen::Vector2d(0.1, -0.4);

    const auto base = simulate_base(nonlinear, z0, e);
    const auto mod0 = simulate_modified(nonlinear, DriftTable::zero(g, 2), z0, e);
    CHECK(same_bits(base.states, mod0.states));

    // sigma = I, b = 0: Z~ = B - int h ds
    Eigen::VectorXd hv(g.steps + 1);
    for (int k = 0; k <= g.steps; ++k) hv(k) = 0.5 + g.time(k);
    const DriftTable h(g, 2, hv);
    const auto tilde = simulate_modified(brownian(2), h, Eigen::VectorXd::Zero(2), e);
    const Eigen::MatrixXd B = e.brownian_path();
    double worst = 0, integral = 0;
    for (int k = 0; k <= g.steps; ++k) {
        for (std::size_t m = 0; m < e.paths(); ++m)
            for (int i = 0; i < 2; ++i)
                worst = std::max(worst, std::abs(tilde.state(m, k, i) - (B(k * 2 + i, static_cast<Eigen::Index>(m)) - integral)));
        if (k < g.steps) integral += hv(k) * g.dt();
    }
    CHECK(worst <= 1e-13);

    // sigma = 0: h has no effect
    const auto still = constant_coeffs(Eigen::MatrixXd::Zero(2, 2), Eigen::Vector2d(0.2, 0.1));
    CHECK(same_bits(simulate_base(still, z0, e).states, simulate_modified(still, h, z0, e).states));

    CHECK_THROWS_AS(simulate_modified(brownian(2), DriftTable::zero(TimeGrid(1.0, 20), 2), z0, e),
                    std::invalid_argument);
}

TEST_CASE("drift table") {
    const TimeGrid g(2.0, 8);
    const auto t = DriftTable::constant(g, 3, 0.7);
    CHECK(t.values().rows() == 9);
    CHECK((t.values().array() == 0.7).all());
    CHECK(!t.is_extension());
    const auto c = t.coarsen(4);
    CHECK(c.grid().steps == 2);
    CHECK_THROWS_AS(t.coarsen(3), std::invalid_argument);
    CHECK_THROWS_AS(DriftTable(g, 1, Eigen::VectorXd::Constant(9, -1.0)), std::invalid_argument);
    CHECK_THROWS_AS(DriftTable(g, 1, Eigen::VectorXd::Constant(5, 1.0)), std::invalid_argument);
    const auto o = DriftTable::override_components(g, Eigen::MatrixXd::Random(9, 2));
    CHECK(o.is_extension());
}

TEST_CASE("explosions are flagged") {
    SdeCoefficients blowup;
    blowup.dim = 1;
    blowup.sigma = [](const Eigen::VectorXd&) { return Eigen::MatrixXd::Zero(1, 1); };
    blowup.drift = [](const Eigen::VectorXd& z) { return Eigen::VectorXd(z.array().square()); };
    const TimeGrid g(1.0, 200);
    const auto z = simulate_base(blowup, Eigen::VectorXd::Constant(1, 50.0), sample_brownian(g, 1, 5, 1));
    CHECK(z.flagged_count() == 5);
    const auto ok = simulate_base(brownian(1), Eigen::VectorXd::Zero(1), sample_brownian(g, 1, 5, 1));
    CHECK(ok.flagged_count() == 0);
    CHECK(ok.states.allFinite());
}

TEST_CASE("weak consistency of Brownian endpoints against quadrature") {
    const TimeGrid g(1.0, 10);
    const std::size_t M = 100000;
    const auto z = simulate_base(brownian(1), Eigen::VectorXd::Zero(1), sample_brownian(g, 1, M, 99));
    const auto& rule = cached_gauss_hermite(60);
    for (const auto& psi : default_panel(1)) {
        std::vector<double> v(M);
        for (std::size_t m = 0; m < M; ++m) v[m] = psi.value(z.state_at(m, g.steps));
        // E psi(B_T) = pi^{-1/2} sum w_k psi(sqrt(2T) s_k)
        double q = 0;
        for (int k = 0; k < rule.size(); ++k)
            q += rule.weights(k) * psi.value(Eigen::VectorXd::Constant(1, std::sqrt(2.0 * g.horizon) * rule.nodes(k)));
        q /= std::sqrt(std::numbers::pi);
        const auto est = mean_estimate(v);
        CHECK(std::abs(est.mean - q) <= 3 * est.std_error);
    }
}

TEST_CASE("example 2 process") {
    const TimeGrid fine(1.0, 512);
    const std::size_t M = 4000;
    const auto base = sample_brownian(fine, 1, M, 21);
    std::vector<double> log_dt, log_err;
    for (int factor : {1, 2, 4, 8, 16}) {
        const auto z = simulate_example2(coarsen(base, factor));
        REQUIRE(z.aux.count("B") == 1);
        const int K = z.grid.steps;
        std::vector<double> err(M);
        for (std::size_t m = 0; m < M; ++m)
            err[m] = std::abs(z.state(m, K, 0) - z.aux.at("Z_exact")(K, static_cast<Eigen::Index>(m)));
        log_dt.push_back(std::log2(z.grid.dt()));
        log_err.push_back(std::log2(mean_estimate(err).mean));
    }
    // Z_K - B_T^2 = sum_k (dt - dB_k^2), whose mean modulus is sqrt(4 T dt / pi)
    const auto fit = fit_slope(log_dt, log_err);
    MESSAGE("example 2 pathwise order " << fit.slope);
    CHECK(std::abs(fit.slope - 0.5) <= 0.1);
    const double predicted = std::sqrt(4.0 * fine.dt() / std::numbers::pi);
    CHECK(std::exp2(log_err.front()) == doctest::Approx(predicted).epsilon(0.05));

    // dB = 0: Z_t = t
    auto still = base;
    still.increments.setZero();
    const auto z = simulate_example2(coarsen(still, 64));
    for (int k = 0; k <= z.grid.steps; ++k) CHECK(z.state(0, k, 0) == doctest::Approx(z.grid.time(k)).epsilon(1e-15));

    // quadratic variation of Z against the Riemann sum of 4 B^2 on the same path
    const auto full = simulate_example2(base);
    const Eigen::MatrixXd& B = full.aux.at("B");
    for (std::size_t m : {std::size_t{0}, std::size_t{1}, std::size_t{2}}) {
        double qv = 0, riemann = 0;
        for (int k = 0; k < fine.steps; ++k) {
            qv += std::pow(full.state(m, k + 1, 0) - full.state(m, k, 0), 2);
            riemann += 4 * B(k, static_cast<Eigen::Index>(m)) * B(k, static_cast<Eigen::Index>(m)) * fine.dt();
        }
        CHECK(qv == doctest::Approx(riemann).epsilon(0.25));
    }
}

TEST_CASE("ensemble CSV export") {
    const TimeGrid g(1.0, 2);
    const auto z = simulate_base(brownian(1), Eigen::VectorXd::Zero(1), sample_brownian(g, 1, 2, 1));
    std::ostringstream rows, summary;
    write_ensemble_csv(rows, z);
    write_ensemble_summary_csv(summary, z);
    std::string line;
    std::istringstream in(rows.str());
    std::getline(in, line);
    CHECK(line == "path,k,t,z1,dB1");
    int n = 0;
    while (std::getline(in, line)) ++n;
    CHECK(n == 6);
    CHECK(summary.str().rfind("t,mean1,var1\n0,0,0\n", 0) == 0);
}
