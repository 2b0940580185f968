#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "hslab/multi_index.hpp"

namespace hslab {

namespace detail {

template <typename Scalar>
inline constexpr Scalar kRescaleThreshold = Scalar(1e250);

template <typename Scalar>
void check_hermite_args(int n, Scalar x) {
    if (n < 0) throw std::invalid_argument("Hermite order must be non-negative, got " + std::to_string(n));
    if (!std::isfinite(static_cast<double>(x))) throw std::domain_error("Hermite argument is not finite");
}

// Combines a mantissa v with a log-scale: v * exp(log_scale), without
// underflowing the exp() when the product itself is representable.
template <typename Scalar>
Scalar apply_log_scale(Scalar v, Scalar log_scale) {
    using std::exp;
    using std::log;
    using std::abs;
    if (v == Scalar(0)) return Scalar(0);
    if (log_scale > Scalar(-600)) return v * exp(log_scale);
    return std::copysign(exp(log(abs(v)) + log_scale), v);
}

}  // namespace detail

/// Fills out(k) = h_k(x) for k = 0..n_max, the L2-orthonormal Hermite functions.
///
/// Runs the three-term recurrence on h_k(x) e^{x^2/2} and carries the Gaussian
/// factor as a separate log-scale, rescaling whenever the mantissa exceeds
/// 1e250. This keeps relative accuracy for large |x| where e^{-x^2/2} alone
/// would underflow.
template <typename Scalar, typename Derived>
void hermite_functions(int n_max, Scalar x, Eigen::MatrixBase<Derived> const& out_) {
    detail::check_hermite_args(n_max, x);
    auto& out = const_cast<Eigen::MatrixBase<Derived>&>(out_);
    out.derived().resize(n_max + 1);
    using std::sqrt;
    using std::log;
    const Scalar pi = std::numbers::pi_v<Scalar>;
    using std::exp;
    Scalar log_scale = -x * x / Scalar(2);
    // exp(log_scale) changes only at a rescale, so it is computed once per scale
    Scalar factor = exp(log_scale);
    auto scaled = [&](Scalar v) {
        if (v == Scalar(0)) return Scalar(0);
        return log_scale > Scalar(-600) ? v * factor : detail::apply_log_scale(v, log_scale);
    };
    Scalar prev = Scalar(0);
    Scalar cur = Scalar(1) / sqrt(sqrt(pi));
    out(0) = scaled(cur);
    for (int k = 0; k < n_max; ++k) {
        const Scalar next = x * sqrt(Scalar(2) / Scalar(k + 1)) * cur - sqrt(Scalar(k) / Scalar(k + 1)) * prev;
        prev = cur;
        cur = next;
        if (std::abs(cur) > detail::kRescaleThreshold<Scalar>) {
            const Scalar s = Scalar(1) / detail::kRescaleThreshold<Scalar>;
            cur *= s;
            prev *= s;
            log_scale += log(detail::kRescaleThreshold<Scalar>);
            factor = exp(log_scale);
        }
        out(k + 1) = scaled(cur);
    }
}

template <typename Scalar = double>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> hermite_functions(int n_max, Scalar x) {
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out(n_max + 1);
    hermite_functions(n_max, x, out);
    return out;
}

/// h_n(x).
template <typename Scalar>
Scalar hermite_eval(int n, Scalar x) {
    return hermite_functions<Scalar>(n, x)(n);
}

/// h_n'(x) = sqrt(n/2) h_{n-1}(x) - sqrt((n+1)/2) h_{n+1}(x).
template <typename Scalar>
Scalar hermite_derivative(int n, Scalar x) {
    using std::sqrt;
    const auto h = hermite_functions<Scalar>(n + 1, x);
    const Scalar lower = n > 0 ? sqrt(Scalar(n) / Scalar(2)) * h(n - 1) : Scalar(0);
    return lower - sqrt(Scalar(n + 1) / Scalar(2)) * h(n + 1);
}

/// Product of 1-d Hermite functions, prod_i h_{n_i}(x_i).
template <typename Scalar>
Scalar hermite_eval_multi(const MultiIndex& n, const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& x) {
    if (n.dim() != x.size())
        throw std::invalid_argument("hermite_eval_multi: index has dimension " + std::to_string(n.dim()) +
                                    ", point has " + std::to_string(x.size()));
    Scalar v = Scalar(1);
    for (int i = 0; i < n.dim(); ++i) v *= hermite_eval<Scalar>(n[i], x(i));
    return v;
}

}  // namespace hslab
