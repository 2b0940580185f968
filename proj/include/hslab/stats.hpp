#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace hslab {

/// Neumaier-compensated running sum.
class CompensatedSum {
public:
    void add(double v) {
        const double t = sum_ + v;
        if (std::abs(sum_) >= std::abs(v))
            comp_ += (sum_ - t) + v;
        else
            comp_ += (v - t) + sum_;
        sum_ = t;
    }
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

/// Sample mean with its standard error.
struct MeanEstimate {
    double mean = 0.0;
    double std_error = 0.0;
    std::size_t count = 0;
};

/// Mean and standard error of the entries whose mask is false (mask may be empty).
/// Accumulates in index order, so the result does not depend on how the
/// values were produced.
MeanEstimate mean_estimate(std::span<const double> values, std::span<const unsigned char> excluded = {});

/// Least-squares slope of y against x with its standard error.
struct SlopeEstimate {
    double slope = 0.0;
    double intercept = 0.0;
    double std_error = 0.0;
};

/// Weighted least squares (weights = 1/sigma^2, sigma may be empty for OLS).
SlopeEstimate fit_slope(std::span<const double> x, std::span<const double> y, std::span<const double> sigma = {});

}  // namespace hslab
