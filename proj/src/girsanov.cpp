#include "hslab/girsanov.hpp"

#include <fmt/format.h>
#include <fmt/ostream.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "hslab/parallel.hpp"

namespace hslab {

DriftEstimate estimate_h(const Eigen::MatrixXd& norms_squared, const TimeGrid& grid, int dim,
                         std::span<const unsigned char> flagged) {
    const int K = grid.steps;
    if (norms_squared.rows() != K + 1)
        throw std::invalid_argument(
            fmt::format("estimate_h: expected {} grid rows, got {}", K + 1, norms_squared.rows()));
    if (!flagged.empty() && flagged.size() != static_cast<std::size_t>(norms_squared.cols()))
        throw std::invalid_argument("estimate_h: flag mask does not match the number of paths");
    Eigen::VectorXd ms(K + 1), ms_err(K + 1), h(K + 1), h_err(K + 1);
    std::vector<double> row(static_cast<std::size_t>(norms_squared.cols()));
    for (int k = 0; k <= K; ++k) {
        for (std::size_t m = 0; m < row.size(); ++m) row[m] = norms_squared(k, static_cast<Eigen::Index>(m));
        const auto est = mean_estimate(row, flagged);
        if (est.count == 0) throw std::runtime_error(fmt::format("estimate_h: every path is flagged at step {}", k));
        if (!std::isfinite(est.mean) || est.mean < 0.0)
            throw std::runtime_error(fmt::format("estimate_h: invalid mean square norm {} at step {}", est.mean, k));
        ms(k) = est.mean;
        ms_err(k) = est.std_error;
        h(k) = std::sqrt(est.mean);
        h_err(k) = h(k) > 0.0 ? est.std_error / (2.0 * h(k)) : 0.0;
    }
    return {DriftTable(grid, dim, h), ms, ms_err, h_err};
}

Eigen::VectorXd log_exponential_martingale(const PathEnsemble& ensemble, const DriftTable& h, unsigned threads) {
    if (!(h.grid() == ensemble.grid) || h.dim() != ensemble.dim)
        throw std::invalid_argument("exponential martingale: drift table does not match the ensemble");
    const int K = ensemble.grid.steps;
    const int d = ensemble.dim;
    const double dt = ensemble.grid.dt();
    double compensator = 0.0;
    for (int j = 0; j < d; ++j)
        for (int k = 0; k < K; ++k) compensator += h.component(k, j) * h.component(k, j) * dt;
    Eigen::VectorXd out(static_cast<Eigen::Index>(ensemble.paths()));
    parallel_for(ensemble.paths(), threads, [&](std::size_t m) {
        double s = 0.0;
        for (int j = 0; j < d; ++j)
            for (int k = 0; k < K; ++k) s += h.component(k, j) * ensemble.increment(m, k, j);
        out(static_cast<Eigen::Index>(m)) = s - 0.5 * compensator;
    });
    return out;
}

NovikovEstimate novikov_estimate(const DriftTable& h) {
    const int K = h.grid().steps;
    const double dt = h.grid().dt();
    double integral = 0.0;
    for (int j = 0; j < h.dim(); ++j)
        for (int k = 0; k < K; ++k) integral += h.component(k, j) * h.component(k, j) * dt;
    NovikovEstimate n;
    n.log_value = 0.5 * integral;
    n.value = std::exp(n.log_value);
    n.overflow = !std::isfinite(n.value);
    return n;
}

WeightedEstimate weighted_expectation(std::span<const double> values, std::span<const double> weights,
                                      std::span<const unsigned char> excluded) {
    if (values.size() != weights.size())
        throw std::invalid_argument("weighted_expectation: values and weights differ in length");
    if (!excluded.empty() && excluded.size() != values.size())
        throw std::invalid_argument("weighted_expectation: mask length mismatch");
    CompensatedSum sw, sw2, swv;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!excluded.empty() && excluded[i]) continue;
        if (!(weights[i] >= 0.0) || !std::isfinite(weights[i]))
            throw std::invalid_argument("weighted_expectation: weights must be finite and non-negative");
        sw.add(weights[i]);
        sw2.add(weights[i] * weights[i]);
        swv.add(weights[i] * values[i]);
    }
    if (!(sw.value() > 0.0)) throw std::invalid_argument("weighted_expectation: zero total weight");
    WeightedEstimate e;
    e.mean = swv.value() / sw.value();
    CompensatedSum spread;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!excluded.empty() && excluded[i]) continue;
        const double r = weights[i] * (values[i] - e.mean);
        spread.add(r * r);
    }
    e.std_error = std::sqrt(spread.value()) / sw.value();
    e.effective_sample_size = sw.value() * sw.value() / sw2.value();
    return e;
}

WeightedEstimate weighted_expectation_log(std::span<const double> values, std::span<const double> log_weights,
                                          std::span<const unsigned char> excluded) {
    if (values.size() != log_weights.size())
        throw std::invalid_argument("weighted_expectation: values and weights differ in length");
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < log_weights.size(); ++i)
        if (excluded.empty() || !excluded[i]) top = std::max(top, log_weights[i]);
    if (!std::isfinite(top)) throw std::invalid_argument("weighted_expectation: no finite log weight");
    std::vector<double> w(log_weights.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(log_weights[i] - top);
    return weighted_expectation(values, w, excluded);
}

MeasureChange measure_change(const PathEnsemble& ensemble, const DriftTable& h, unsigned threads) {
    MeasureChange c{h, log_exponential_martingale(ensemble, h, threads), {}, novikov_estimate(h), {}, 0.0};
    const auto n = static_cast<std::size_t>(c.log_weights.size());
    c.overflow.assign(n, 0);
    std::vector<double> w(n);
    CompensatedSum sw, sw2;
    for (std::size_t m = 0; m < n; ++m) {
        w[m] = std::exp(c.log_weights(static_cast<Eigen::Index>(m)));
        if (!std::isfinite(w[m]) || w[m] == 0.0) c.overflow[m] = 1;
        sw.add(w[m]);
        sw2.add(w[m] * w[m]);
    }
    c.martingale_mean = mean_estimate(w, c.overflow);
    c.effective_sample_size = sw.value() * sw.value() / sw2.value();
    return c;
}

Eigen::MatrixXd transform_increments(const PathEnsemble& ensemble, const DriftTable& h) {
    if (!(h.grid() == ensemble.grid) || h.dim() != ensemble.dim)
        throw std::invalid_argument("transform_bm: drift table does not match the ensemble");
    const int d = ensemble.dim;
    const double dt = ensemble.grid.dt();
    Eigen::MatrixXd out = ensemble.increments;
    for (int k = 0; k < ensemble.grid.steps; ++k)
        for (int j = 0; j < d; ++j) {
            const double shift = h.component(k, j) * dt;
            if (shift != 0.0) out.row(k * d + j).array() -= shift;
        }
    return out;
}

PathEnsemble transform_bm(const PathEnsemble& ensemble, const DriftTable& h) {
    return with_increments(ensemble, transform_increments(ensemble, h));
}

void write_h_table(std::ostream& out, const DriftTable& h) {
    const int cols = h.is_extension() ? h.dim() : 1;
    out << "t,h";
    for (int j = 1; j < cols; ++j) out << ",h" << j + 1;
    out << '\n';
    for (int k = 0; k <= h.grid().steps; ++k) {
        fmt::print(out, "{}", h.grid().time(k));
        for (int j = 0; j < cols; ++j) fmt::print(out, ",{}", h.component(k, j));
        out << '\n';
    }
}

void write_log_weights(std::ostream& out, const MeasureChange& change) {
    out << "path,log_weight\n";
    for (Eigen::Index m = 0; m < change.log_weights.size(); ++m) fmt::print(out, "{},{}\n", m, change.log_weights(m));
}

void write_girsanov_summary(std::ostream& out, const MeasureChange& change) {
    out << "novikov_estimate,martingale_mean,stderr,effective_sample_size\n";
    fmt::print(out, "{},{},{},{}\n", change.novikov.value, change.martingale_mean.mean,
               change.martingale_mean.std_error, change.effective_sample_size);
}

}  // namespace hslab
