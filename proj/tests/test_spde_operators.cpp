#include "doctest.h"

#include <cmath>
#include <cstring>
#include <numbers>
#include <vector>

#include "hslab/hermite.hpp"
#include "hslab/quadrature.hpp"
#include "hslab/spde_operators.hpp"
#include "hslab/test_functions.hpp"

using namespace hslab;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index k = 0;
    for (double x : v) out(k++) = x;
    return out;
}

CoefficientField identity_surrogate_field(int d, int N, double p) {
    const BasisTruncation t(d, N);
    CoefficientField f;
    f.dim = d;
    f.p = p;
    const auto one = Coefficient::functional(constant_surrogate(1.0, 4.0, t));
    const auto zero = Coefficient::functional(HermiteExpansion::zero(t));
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) f.sigma.push_back(i == j ? one : zero);
    for (int i = 0; i < d; ++i) f.drift.push_back(zero);
    f.base = DeltaFamily{Eigen::VectorXd::Zero(d)};
    f.validate();
    return f;
}

bool bit_identical(const HermiteExpansion& a, const HermiteExpansion& b) {
    return a.coeffs().size() == b.coeffs().size() &&
           std::memcmp(a.coeffs().data(), b.coeffs().data(), sizeof(double) * a.coeffs().size()) == 0;
}

double h0(double x) { return std::pow(std::numbers::pi, -0.25) * std::exp(-x * x / 2); }

}  // namespace

TEST_CASE("sigma_eval pairs deltas with the coefficient functionals") {
    const BasisTruncation t(1, 40);
    CoefficientField f;
    f.dim = 1;
    f.p = 0.5;
    f.sigma = {Coefficient::functional(HermiteExpansion::basis_element(t, MultiIndex({0})))};
    f.drift = {Coefficient::functional(HermiteExpansion::basis_element(t, MultiIndex({1})))};
    f.validate();
    for (double x : {-2.0, 0.0, 0.3, 3.1}) {
        const Profile delta = DeltaFamily{vec({x})};
        CHECK(sigma_eval(f, delta)(0, 0) == doctest::Approx(hermite_eval(0, x)).epsilon(1e-14));
        CHECK(b_eval(f, delta)(0) == doctest::Approx(hermite_eval(1, x)).epsilon(1e-14));
    }
    CHECK(sigma_eval(f, HermiteExpansion::zero(t))(0, 0) == 0.0);

    const auto y = TestFunction::gaussian(vec({0.4}), 0.9).expansion(t);
    CHECK(b_eval(f, 2.5 * y)(0) == doctest::Approx(2.5 * b_eval(f, y)(0)).epsilon(1e-14));
    CHECK_THROWS_AS(sigma_eval(f, HermiteExpansion::zero(BasisTruncation(2, 4))), std::invalid_argument);
}

TEST_CASE("constant surrogate acts like 1 on deltas in the window") {
    const auto f = identity_surrogate_field(1, 60, 0.5);
    double worst = 0;
    for (int k = 0; k <= 400; ++k) {
        const double x = -4.0 + 8.0 * k / 400;
        worst = std::max(worst, std::abs(sigma_eval(f, Profile(DeltaFamily{vec({x})}))(0, 0) - 1.0));
    }
    CHECK(worst <= 1e-3);
    CHECK(b_eval(f, Profile(DeltaFamily{vec({1.0})}))(0) == 0.0);

    const auto g = identity_surrogate_field(2, 60, 1.0);
    const Eigen::MatrixXd S = sigma_eval(g, Profile(DeltaFamily{vec({0.5, -1.5})}));
    CHECK((S - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() <= 1e-3);
}

TEST_CASE("apply_L and apply_A on a delta reproduce the generator and the noise term") {
    const int N = 80;
    const auto f = identity_surrogate_field(1, N, 0.5);
    const BasisTruncation t(1, N);
    for (const auto& psi : default_panel(1)) {
        const auto psi_c = psi.expansion(t);
        for (double x : {-1.3, 0.0, 0.7, 2.0}) {
            const auto y = delta_expansion(vec({x}), t).with_regularity(-0.5);
            const auto Ly = apply_L(f, y);
            const auto Ay = apply_A(f, y, 0);
            CHECK(std::abs(pair(Ly, psi_c) - 0.5 * psi.hessian(vec({x}))(0, 0)) <= 1e-3);
            CHECK(std::abs(pair(Ay, psi_c) - psi.gradient(vec({x}))(0)) <= 1e-3);
            CHECK(Ly.regularity() == -1.5);
            CHECK(Ay.regularity() == -1.5);
        }
    }
    const auto zero = HermiteExpansion::zero(t, -0.5);
    CHECK(apply_L(f, zero).coeffs().cwiseAbs().maxCoeff() == 0.0);
    CHECK_THROWS_AS(apply_A(f, zero, 1), std::out_of_range);
}

TEST_CASE("apply_L with constant coefficients in two dimensions") {
    Eigen::MatrixXd S(2, 2);
    S << 1.0, 0.5, 0.0, 2.0;
    const auto f = CoefficientField::constant(S, vec({0.3, -0.7}), 1.0, DeltaFamily{vec({0, 0})});
    const BasisTruncation t(2, 40);
    const auto psi = TestFunction::gaussian(vec({0.2, -0.1}), 1.1);
    const auto psi_c = psi.expansion(t);
    const Eigen::VectorXd x = vec({0.4, -0.3});
    const auto y = delta_expansion(x, t);
    const Eigen::MatrixXd a = S * S.transpose();
    const double expected = 0.5 * (a.cwiseProduct(psi.hessian(x))).sum() + vec({0.3, -0.7}).dot(psi.gradient(x));
    CHECK(pair(apply_L(f, y), psi_c) == doctest::Approx(expected).epsilon(1e-6));
    // A_j pairs to sum_i sigma_ij d_i psi
    for (int j = 0; j < 2; ++j)
        CHECK(pair(apply_A(f, y, j), psi_c) == doctest::Approx(S.col(j).dot(psi.gradient(x))).epsilon(1e-6));
}

TEST_CASE("operator structure: unused coefficients do not enter") {
    const BasisTruncation t(1, 30);
    const auto y = TestFunction::gaussian(vec({0.3}), 0.7).expansion(t).with_regularity(-0.5);

    CoefficientField f = CoefficientField::constant(Eigen::MatrixXd::Zero(1, 1), vec({0.8}), 0.5, DeltaFamily{vec({0})});
    auto g = f;
    g.sigma[0] = Coefficient::functional(HermiteExpansion::zero(t));
    const auto Lf = apply_L(f, y);
    CHECK(bit_identical(Lf, apply_L(g, y)));
    CHECK(bit_identical(Lf, -0.8 * derivative(y, 0)));

    auto s1 = CoefficientField::constant(Eigen::MatrixXd::Constant(1, 1, 1.3), vec({0.2}), 0.5, DeltaFamily{vec({0})});
    auto s2 = s1;
    s2.drift[0] = Coefficient::constant(-5.0);
    CHECK(bit_identical(apply_A(s1, y, 0), apply_A(s2, y, 0)));

    auto scaled = s1;
    scaled.sigma[0] = Coefficient::constant(3.0 * 1.3);
    CHECK((apply_A(scaled, y, 0).coeffs() - 3.0 * apply_A(s1, y, 0).coeffs()).cwiseAbs().maxCoeff() <= 1e-14);

    auto zero_sigma = s1;
    zero_sigma.sigma[0] = Coefficient::constant(0.0);
    CHECK(apply_A(zero_sigma, y, 0).coeffs().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("Girsanov drift cancels the weighted noise operators exactly") {
    const BasisTruncation t(2, 20);
    Eigen::MatrixXd S(2, 2);
    S << 0.9, -0.4, 0.25, 1.7;
    const auto f = CoefficientField::constant(S, vec({0.1, 0.2}), 1.0, DeltaFamily{vec({0, 0})});
    const auto y = delta_expansion(vec({0.3, -0.6}), t).with_regularity(-1.0);
    const Eigen::VectorXd h = vec({0.37, -1.21});

    auto acc = HermiteExpansion::zero(t, -2.0);
    for (int j = 0; j < 2; ++j) acc += h(j) * apply_A(f, y, j);
    const auto sum = apply_L_hat(f, y, h) + acc;
    CHECK(sum.coeffs().cwiseAbs().maxCoeff() == 0.0);

    CHECK(apply_L_hat(f, y, vec({0, 0})).coeffs().cwiseAbs().maxCoeff() == 0.0);
    const Eigen::VectorXd h1 = vec({0.5, 0}), h2 = vec({0, -0.25});
    const auto additive = apply_L_hat(f, y, h1 + h2) - (apply_L_hat(f, y, h1) + apply_L_hat(f, y, h2));
    CHECK(additive.coeffs().cwiseAbs().maxCoeff() <= 1e-13);

    // d = 1 identity surrogate: L_hat = h * d(delta_x)
    const auto g = identity_surrogate_field(1, 60, 0.5);
    const BasisTruncation t1(1, 60);
    const auto dx = delta_expansion(vec({0.8}), t1);
    const auto lhat = apply_L_hat(g, dx, vec({0.6}));
    CHECK((lhat + 0.6 * apply_A(g, dx, 0)).coeffs().cwiseAbs().maxCoeff() == 0.0);
    const auto expected = 0.6 * derivative(dx, 0);
    CHECK((lhat.coeffs() - expected.coeffs()).cwiseAbs().maxCoeff() <= 1e-3 * expected.coeffs().cwiseAbs().maxCoeff());
}

TEST_CASE("pullback coefficients evaluate sigma on translated profiles") {
    const BasisTruncation t(1, 60);
    CoefficientField f;
    f.dim = 1;
    f.p = 0.5;
    f.sigma = {Coefficient::functional(HermiteExpansion::basis_element(t, MultiIndex({0})))};
    f.drift = {Coefficient::constant(0.25)};
    f.base = DeltaFamily{vec({0})};
    const auto bar = pullback_coeffs(f);

    // independent quadrature: sum_n h_n(rho) int h_0 h_n dy
    const auto& rule = cached_gauss_hermite(80);
    for (int k = 0; k <= 40; ++k) {
        const double rho = -4.0 + 0.2 * k;
        const double s = bar.sigma(vec({rho}))(0, 0);
        CHECK(s == sigma_eval(f, Profile(DeltaFamily{vec({rho})}))(0, 0));
        const Eigen::VectorXd hr = hermite_functions(60, rho);
        double q = 0;
        for (int i = 0; i < rule.size(); ++i)
            q += rule.scaled_weights(i) * h0(rule.nodes(i)) * hr.dot(hermite_functions(60, rule.nodes(i)));
        CHECK(std::abs(s - q) <= 1e-6);
        CHECK(std::abs(s - h0(rho)) <= 1e-6);
        CHECK(bar.drift(vec({rho}))(0) == 0.25);
    }

    // smooth base profile: rho = 0 gives sigma(phi), and translation moves the Gaussian
    f.base = TestFunction::gaussian(vec({0}), 0.8).expansion(t);
    const auto smooth = pullback_coeffs(f);
    CHECK(smooth.sigma(vec({0}))(0, 0) == doctest::Approx(sigma_eval(f, f.base)(0, 0)).epsilon(1e-14));
    // <exp(-(y-rho)^2/(2w^2)), h_0> in closed form
    for (double rho : {-1.0, 0.5, 2.0}) {
        const double w2 = 0.64;
        const double expected = std::pow(std::numbers::pi, -0.25) * std::sqrt(2 * std::numbers::pi * w2 / (1 + w2)) *
                                std::exp(-rho * rho / (2 * (1 + w2)));
        CHECK(smooth.sigma(vec({rho}))(0, 0) == doctest::Approx(expected).epsilon(1e-8));
    }
}

TEST_CASE("ball bound constants") {
    const std::vector<double> radii{1.0, 2.0, 4.0};
    const auto zero = CoefficientField::constant(Eigen::MatrixXd::Zero(1, 1), vec({0}), 0.5, DeltaFamily{vec({0})});
    for (const auto& b : ball_bound_check(zero, radii, 20, 7, 30)) {
        CHECK(b.c1 == 0.0);
        CHECK(b.c2 == 0.0);
    }

    const double p = 0.5;
    const int N = 80;
    const auto field = identity_surrogate_field(1, N, p);
    const auto bounds = ball_bound_check(field, radii, 200, 11, N);
    REQUIRE(bounds.size() == 3);
    for (std::size_t r = 0; r < bounds.size(); ++r) {
        CHECK(std::isfinite(bounds[r].c1));
        CHECK(std::isfinite(bounds[r].c2));
        if (r > 0) {
            CHECK(bounds[r].c1 >= bounds[r - 1].c1);
            CHECK(bounds[r].c2 >= bounds[r - 1].c2);
        }
    }
    const BasisTruncation t(1, N);
    const auto d0 = delta_expansion(vec({0}), t);
    const double oracle = norm_p(derivative(d0, 0), -p - 1) / norm_p(d0, -p);
    MESSAGE("C2(r=1) = " << bounds[0].c2 << ", delta ratio = " << oracle);
    CHECK(bounds[0].c2 >= 0.5 * oracle);
    CHECK(bounds[0].c2 <= 2.0 * oracle);

    CHECK_THROWS_AS(ball_bound_check(field, std::vector<double>{0.0}, 5, 1, 10), std::invalid_argument);
}

TEST_CASE("coefficient parsing and Lipschitz diagnostic") {
    const BasisTruncation t(1, 30);
    CHECK(parse_coefficient("constant 2.5", t).constant_value() == 2.5);
    CHECK(parse_coefficient("hermite 2", t).expansion().coeff(MultiIndex({2})) == 1.0);
    CHECK(!parse_coefficient("gaussian 0 1 1", t).is_constant());
    CHECK_THROWS_AS(parse_coefficient("constant", t), std::invalid_argument);
    CHECK_THROWS_AS(parse_coefficient("cubic 1", t), std::invalid_argument);
    CHECK_THROWS_AS(parse_coefficient("constant 1 2", t), std::invalid_argument);

    const auto lin = constant_coeffs(Eigen::MatrixXd::Identity(1, 1), vec({0}));
    CHECK(local_lipschitz_estimate(lin, 3.0, 31) == 0.0);
    CoefficientField f;
    f.dim = 1;
    f.p = 0.5;
    f.sigma = {parse_coefficient("hermite 0", t)};
    f.drift = {Coefficient::constant(0)};
    f.base = DeltaFamily{vec({0})};
    // max |h_0'| = pi^{-1/4} e^{-1/2}
    const double L = local_lipschitz_estimate(pullback_coeffs(f), 3.0, 601);
    CHECK(L == doctest::Approx(std::pow(std::numbers::pi, -0.25) * std::exp(-0.5)).epsilon(1e-3));
}
