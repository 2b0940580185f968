#include "hslab/stats.hpp"

#include <stdexcept>

namespace hslab {

MeanEstimate mean_estimate(std::span<const double> values, std::span<const unsigned char> excluded) {
    if (!excluded.empty() && excluded.size() != values.size())
        throw std::invalid_argument("mean_estimate: mask length mismatch");
    CompensatedSum sum;
    std::size_t n = 0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!excluded.empty() && excluded[i]) continue;
        sum.add(values[i]);
        ++n;
    }
    MeanEstimate est;
    est.count = n;
    if (n == 0) return est;
    est.mean = sum.value() / static_cast<double>(n);
    if (n < 2) return est;
    CompensatedSum sq;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!excluded.empty() && excluded[i]) continue;
        const double d = values[i] - est.mean;
        sq.add(d * d);
    }
    est.std_error = std::sqrt(sq.value() / static_cast<double>(n - 1) / static_cast<double>(n));
    return est;
}

SlopeEstimate fit_slope(std::span<const double> x, std::span<const double> y, std::span<const double> sigma) {
    const auto n = static_cast<Eigen::Index>(x.size());
    if (n < 2 || y.size() != x.size() || (!sigma.empty() && sigma.size() != x.size()))
        throw std::invalid_argument("fit_slope: need at least two matching points");
    Eigen::MatrixXd design(n, 2);
    Eigen::VectorXd rhs(n);
    Eigen::VectorXd w = Eigen::VectorXd::Ones(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!sigma.empty()) w(i) = 1.0 / sigma[static_cast<std::size_t>(i)];
        design(i, 0) = w(i);
        design(i, 1) = w(i) * x[static_cast<std::size_t>(i)];
        rhs(i) = w(i) * y[static_cast<std::size_t>(i)];
    }
    const Eigen::Matrix2d normal = design.transpose() * design;
    const Eigen::Vector2d coef = normal.ldlt().solve(design.transpose() * rhs);
    const Eigen::Matrix2d cov_unit = normal.inverse();
    SlopeEstimate out;
    out.intercept = coef(0);
    out.slope = coef(1);
    if (!sigma.empty()) {
        out.std_error = std::sqrt(cov_unit(1, 1));
    } else if (n > 2) {
        const double rss = (rhs - design * coef).squaredNorm();
        out.std_error = std::sqrt(cov_unit(1, 1) * rss / static_cast<double>(n - 2));
    }
    return out;
}

}  // namespace hslab
