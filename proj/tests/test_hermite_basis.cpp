#include "doctest.h"

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "hslab/hermite.hpp"
#include "hslab/multi_index.hpp"
#include "hslab/quadrature.hpp"

using namespace hslab;

namespace {

const double kPi = std::numbers::pi;

// Physicists' Hermite polynomial from the explicit sum
// H_n(x) = n! sum_m (-1)^m (2x)^{n-2m} / (m! (n-2m)!), times the normalisation.
double closed_form_hermite_function(int n, double x) {
    long double sum = 0;
    for (int m = 0; 2 * m <= n; ++m) {
        long double term = std::tgamma(n + 1.0L) / (std::tgamma(m + 1.0L) * std::tgamma(n - 2 * m + 1.0L));
        term *= std::pow(2.0L * x, n - 2 * m);
        sum += (m % 2 ? -term : term);
    }
    const long double norm = std::sqrt(std::pow(2.0L, n) * std::tgamma(n + 1.0L) * std::sqrt(std::numbers::pi_v<long double>));
    return static_cast<double>(sum / norm * std::exp(-0.5L * x * x));
}

// Unscaled recurrence in long double: its exponent range covers e^{-x^2/2}
// for |x| <= 40, so it needs no rescaling.
long double long_double_hermite(int n, long double x) {
    long double prev = 0, cur = std::pow(std::numbers::pi_v<long double>, -0.25L) * std::exp(-x * x / 2);
    for (int k = 0; k < n; ++k) {
        const long double next = x * std::sqrt(2.0L / (k + 1)) * cur - std::sqrt(static_cast<long double>(k) / (k + 1)) * prev;
        prev = cur;
        cur = next;
    }
    return cur;
}

}  // namespace

TEST_CASE("enumerate_indices lists the graded simplex") {
    const auto one = enumerate_indices(1, 2);
    REQUIRE(one.size() == 3);
    CHECK(one[0] == MultiIndex({0}));
    CHECK(one[1] == MultiIndex({1}));
    CHECK(one[2] == MultiIndex({2}));

    const auto two = enumerate_indices(2, 1);
    REQUIRE(two.size() == 3);
    CHECK(two[0] == MultiIndex({0, 0}));
    CHECK(two[1] == MultiIndex({1, 0}));
    CHECK(two[2] == MultiIndex({0, 1}));

    std::size_t brute = 0;
    for (int a = 0; a <= 4; ++a)
        for (int b = 0; b <= 4; ++b)
            for (int c = 0; c <= 4; ++c)
                if (a + b + c <= 4) ++brute;
    CHECK(brute == 35);
    CHECK(enumerate_indices(3, 4).size() == brute);
    CHECK(binomial(7, 3) == 35);
}

TEST_CASE("enumerate_indices rejects bad arguments") {
    CHECK_THROWS_AS(enumerate_indices(0, 3), std::invalid_argument);
    CHECK_THROWS_AS(enumerate_indices(2, -1), std::invalid_argument);
    CHECK_THROWS_AS(BasisTruncation(0, 1), std::invalid_argument);
    CHECK_THROWS_AS(MultiIndex({1, -2}), std::invalid_argument);
}

TEST_CASE("graded order is a bijection with storage offsets") {
    for (int d = 1; d <= 4; ++d) {
        for (int N = 0; N <= 12; ++N) {
            const BasisTruncation t(d, N);
            REQUIRE(t.size() == binomial(N + d, d));
            int last_order = 0;
            for (std::size_t k = 0; k < t.size(); ++k) {
                const auto& n = t.index(k);
                CHECK(n.order() == t.order(k));
                CHECK(n.order() >= last_order);
                last_order = n.order();
                REQUIRE(t.offset(n) == k);
            }
        }
    }
}

TEST_CASE("neighbour tables follow +/- e_i") {
    const BasisTruncation t(3, 5);
    for (std::size_t k = 0; k < t.size(); ++k) {
        for (int a = 0; a < 3; ++a) {
            MultiIndex n = t.index(k);
            const auto up = t.raised(k, a);
            if (n.order() == 5) {
                CHECK(up == BasisTruncation::npos);
            } else {
                n.entries[static_cast<std::size_t>(a)] += 1;
                CHECK(up == static_cast<std::ptrdiff_t>(t.offset(n)));
                n.entries[static_cast<std::size_t>(a)] -= 1;
            }
            const auto down = t.lowered(k, a);
            if (n[a] == 0) {
                CHECK(down == BasisTruncation::npos);
            } else {
                n.entries[static_cast<std::size_t>(a)] -= 1;
                CHECK(down == static_cast<std::ptrdiff_t>(t.offset(n)));
            }
        }
    }
}

TEST_CASE("hermite_eval point values") {
    CHECK(hermite_eval(1, 0.0) == 0.0);
    CHECK(hermite_eval(0, 0.0) == doctest::Approx(std::pow(kPi, -0.25)).epsilon(1e-15));
    CHECK(std::pow(kPi, -0.25) == doctest::Approx(0.751126).epsilon(1e-6));

    // int h_0^2 dx = 1 via the rule's dx-weights
    const auto rule = gauss_hermite(20);
    double integral = 0;
    for (int k = 0; k < rule.size(); ++k) integral += rule.scaled_weights(k) * std::pow(hermite_eval(0, rule.nodes(k)), 2);
    CHECK(integral == doctest::Approx(1.0).epsilon(1e-13));

    // H_7(x) = 128x^7 - 1344x^5 + 3360x^3 - 1680x
    const double x = 1.3;
    const double H7 = 128 * std::pow(x, 7) - 1344 * std::pow(x, 5) + 3360 * std::pow(x, 3) - 1680 * x;
    const double expected = H7 * std::exp(-x * x / 2) / std::sqrt(std::pow(2.0, 7) * 5040.0 * std::sqrt(kPi));
    CHECK(hermite_eval(7, x) == doctest::Approx(expected).epsilon(1e-13));
}

TEST_CASE("recurrence agrees with the explicit polynomial for n <= 12") {
    for (int n = 0; n <= 12; ++n) {
        for (int xi = -5; xi <= 5; ++xi) {
            const double ref = closed_form_hermite_function(n, xi);
            const double got = hermite_eval(n, static_cast<double>(xi));
            CHECK(std::abs(got - ref) <= 1e-10 * std::abs(ref) + 1e-300);
        }
    }
}

TEST_CASE("derivative identity matches central differences") {
    const double step = 1e-5;
    for (int n = 0; n <= 20; ++n) {
        for (double x : {-3.7, -1.1, 0.0, 0.4, 2.5, 4.2}) {
            const double fd = (hermite_eval(n, x + step) - hermite_eval(n, x - step)) / (2 * step);
            CHECK(std::abs(hermite_derivative(n, x) - fd) <= 1e-6);
        }
    }
}

TEST_CASE("scaled recurrence stays finite and accurate far out") {
    for (int n : {0, 10, 100, 300, 512}) {
        for (double x : {-40.0, -25.0, 31.0, 40.0}) {
            const double got = hermite_eval(n, x);
            const long double ref = long_double_hermite(n, x);
            REQUIRE(std::isfinite(got));
            if (std::abs(ref) < std::numeric_limits<double>::min()) {
                CHECK(std::abs(got) < 1e-300);
            } else {
                CHECK(std::abs(got - static_cast<double>(ref)) <= 1e-10 * std::abs(static_cast<double>(ref)));
            }
        }
    }
    const auto all = hermite_functions(512, 40.0);
    CHECK(all.allFinite());
}

TEST_CASE("hermite_eval rejects bad input") {
    CHECK_THROWS_AS(hermite_eval(-1, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(hermite_eval(3, std::numeric_limits<double>::quiet_NaN()), std::domain_error);
    CHECK_THROWS_AS(hermite_eval(3, std::numeric_limits<double>::infinity()), std::domain_error);
}

TEST_CASE("hermite_eval_multi is the tensor product") {
    const Eigen::Vector2d origin(0, 0);
    CHECK(hermite_eval_multi(MultiIndex({0, 0}), Eigen::VectorXd(origin)) == doctest::Approx(1 / std::sqrt(kPi)));
    CHECK(hermite_eval_multi(MultiIndex({1, 0}), Eigen::VectorXd(Eigen::Vector2d(0, 5))) == 0.0);
    const double a = 0.7, b = -1.2;
    CHECK(hermite_eval_multi(MultiIndex({2, 3}), Eigen::VectorXd(Eigen::Vector2d(a, b))) ==
          doctest::Approx(hermite_eval(2, a) * hermite_eval(3, b)).epsilon(1e-15));
    CHECK_THROWS_AS(hermite_eval_multi(MultiIndex({1, 2, 3}), Eigen::VectorXd(origin)), std::invalid_argument);
}

TEST_CASE("gauss_hermite small rules") {
    const auto one = gauss_hermite(1);
    CHECK(one.nodes(0) == 0.0);
    CHECK(one.weights(0) == doctest::Approx(std::sqrt(kPi)));

    const auto two = gauss_hermite(2);
    CHECK(two.nodes(0) == doctest::Approx(-1 / std::sqrt(2.0)).epsilon(1e-15));
    CHECK(two.nodes(1) == doctest::Approx(1 / std::sqrt(2.0)).epsilon(1e-15));
    CHECK(two.weights(0) == doctest::Approx(std::sqrt(kPi) / 2).epsilon(1e-15));
    CHECK(two.weights(1) == doctest::Approx(std::sqrt(kPi) / 2).epsilon(1e-15));
    // exact on 1, x, x^2, x^3
    const double moments[] = {std::sqrt(kPi), 0.0, std::sqrt(kPi) / 2, 0.0};
    for (int p = 0; p < 4; ++p) {
        const double q = two.weights(0) * std::pow(two.nodes(0), p) + two.weights(1) * std::pow(two.nodes(1), p);
        CHECK(std::abs(q - moments[p]) <= 1e-14);
    }
}

TEST_CASE("gauss_hermite weights sum to sqrt(pi) and integrate monomials exactly") {
    for (int m : {8, 33, 64, 128}) {
        const auto rule = gauss_hermite(m);
        CHECK(rule.weights.sum() == doctest::Approx(std::sqrt(kPi)).epsilon(1e-12));
        CHECK((rule.weights.array() > 0).all());
        // int x^{2k} e^{-x^2} = Gamma(k + 1/2)
        for (int k = 0; 2 * k <= std::min(2 * m - 1, 40); ++k) {
            double q = 0;
            for (int i = 0; i < m; ++i) q += rule.weights(i) * std::pow(rule.nodes(i), 2 * k);
            CHECK(q == doctest::Approx(std::tgamma(k + 0.5)).epsilon(1e-11));
        }
    }
}

TEST_CASE("gauss_hermite orthonormality after weight compensation") {
    for (int m : {16, 64}) {
        const auto rule = gauss_hermite(m);
        const int top = m / 2 - 1;
        Eigen::MatrixXd H(m, top + 1);
        for (int k = 0; k < m; ++k) H.row(k) = hermite_functions(top, rule.nodes(k)).transpose();
        const Eigen::MatrixXd G = H.transpose() * rule.scaled_weights.asDiagonal() * H;
        CHECK((G - Eigen::MatrixXd::Identity(top + 1, top + 1)).cwiseAbs().maxCoeff() <= 1e-10);
    }
    const auto big = gauss_hermite(512);
    CHECK(big.nodes.allFinite());
    CHECK(big.scaled_weights.allFinite());
    CHECK((big.weights.array() >= 0).all());
    CHECK(big.weights.sum() == doctest::Approx(std::sqrt(kPi)).epsilon(1e-12));
}

TEST_CASE("gauss_hermite range checks") {
    CHECK_THROWS_AS(gauss_hermite(0), std::invalid_argument);
    CHECK_THROWS_AS(gauss_hermite(513), std::invalid_argument);
}

TEST_CASE("gauss_hermite works in long double") {
    const auto rule = gauss_hermite<long double>(24);
    CHECK(static_cast<double>(rule.weights.sum()) == doctest::Approx(std::sqrt(kPi)).epsilon(1e-15));
}
