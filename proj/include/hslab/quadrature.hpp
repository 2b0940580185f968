#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include "hslab/hermite.hpp"

namespace hslab {

/// Gauss-Hermite rule for the weight e^{-x^2}.
///
/// `scaled_weights` are w_k e^{x_k^2}, the weights to use when the integrand
/// is given against plain dx (products of Hermite functions, for instance).
/// For m beyond ~300 the outermost `weights` underflow to zero in double;
/// `scaled_weights` stay finite.
template <typename Scalar>
struct QuadratureRuleT {
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    Vector nodes;
    Vector weights;
    Vector scaled_weights;

    int size() const { return static_cast<int>(nodes.size()); }
};

using QuadratureRule = QuadratureRuleT<double>;

inline constexpr int kMaxQuadratureNodes = 512;

/// m-point Gauss-Hermite rule.
///
/// Nodes come from the symmetric tridiagonal Jacobi matrix (Golub-Welsch) and
/// are polished by Newton steps on h_m. Weights use the closed form
/// w_k e^{x_k^2} = 1 / (m h_{m-1}(x_k)^2), which keeps relative accuracy in the
/// tails where the eigenvector route loses it.
template <typename Scalar = double>
QuadratureRuleT<Scalar> gauss_hermite(int m) {
    if (m < 1 || m > kMaxQuadratureNodes)
        throw std::invalid_argument("gauss_hermite: node count must be in [1, 512], got " + std::to_string(m));
    using Vector = typename QuadratureRuleT<Scalar>::Vector;
    using std::sqrt;
    using std::exp;
    using std::log;

    QuadratureRuleT<Scalar> rule;
    if (m == 1) {
        rule.nodes = Vector::Zero(1);
        rule.weights = Vector::Constant(1, sqrt(std::numbers::pi_v<Scalar>));
        rule.scaled_weights = rule.weights;
        return rule;
    }

    Vector diag = Vector::Zero(m);
    Vector sub(m - 1);
    for (int k = 1; k < m; ++k) sub(k - 1) = sqrt(Scalar(k) / Scalar(2));
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>> solver;
    solver.computeFromTridiagonal(diag, sub, Eigen::EigenvaluesOnly);
    if (solver.info() != Eigen::Success) throw std::runtime_error("gauss_hermite: tridiagonal eigensolver failed");
    rule.nodes = solver.eigenvalues();
    rule.weights.resize(m);
    rule.scaled_weights.resize(m);

    Vector h;
    for (int k = 0; k < m; ++k) {
        Scalar x = rule.nodes(k);
        for (int it = 0; it < 4; ++it) {
            hermite_functions(m, x, h);
            // h_m'(x) = sqrt(2m) h_{m-1}(x) - x h_m(x); at a root only the first term survives
            const Scalar slope = sqrt(Scalar(2 * m)) * h(m - 1) - x * h(m);
            if (slope == Scalar(0)) break;
            const Scalar step = h(m) / slope;
            x -= step;
            if (std::abs(step) <= std::numeric_limits<Scalar>::epsilon() * (Scalar(1) + std::abs(x))) break;
        }
        hermite_functions(m - 1, x, h);
        rule.nodes(k) = x;
        const Scalar hm1 = h(m - 1);
        rule.scaled_weights(k) = Scalar(1) / (Scalar(m) * hm1 * hm1);
        rule.weights(k) = exp(-x * x - log(Scalar(m) * hm1 * hm1));
    }
    // the rule is symmetric; enforce it exactly
    for (int k = 0; k < m / 2; ++k) {
        const int j = m - 1 - k;
        const Scalar x = (rule.nodes(j) - rule.nodes(k)) / Scalar(2);
        rule.nodes(k) = -x;
        rule.nodes(j) = x;
        const Scalar w = (rule.weights(k) + rule.weights(j)) / Scalar(2);
        const Scalar sw = (rule.scaled_weights(k) + rule.scaled_weights(j)) / Scalar(2);
        rule.weights(k) = rule.weights(j) = w;
        rule.scaled_weights(k) = rule.scaled_weights(j) = sw;
    }
    if (m % 2 == 1) rule.nodes(m / 2) = Scalar(0);
    return rule;
}

/// Process-wide cache of double-precision rules; references stay valid for
/// the lifetime of the program and may be shared across threads.
const QuadratureRule& cached_gauss_hermite(int m);

}  // namespace hslab
