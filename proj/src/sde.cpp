#include "hslab/sde.hpp"

#include <fmt/format.h>
#include <fmt/ostream.h>

#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "hslab/parallel.hpp"
#include "hslab/stats.hpp"

namespace hslab {

TimeGrid::TimeGrid(double horizon, int steps) : horizon(horizon), steps(steps) {
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw std::invalid_argument("time grid: horizon must be > 0");
    if (steps < 1) throw std::invalid_argument("time grid: steps must be >= 1");
}

std::size_t PathEnsemble::flagged_count() const {
    std::size_t n = 0;
    for (auto f : flagged) n += f ? 1 : 0;
    return n;
}

Eigen::MatrixXd PathEnsemble::brownian_path() const {
    const int K = grid.steps;
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero((K + 1) * dim, increments.cols());
    for (int k = 0; k < K; ++k) B.middleRows((k + 1) * dim, dim) = B.middleRows(k * dim, dim) + increments.middleRows(k * dim, dim);
    return B;
}

DriftTable::DriftTable(TimeGrid grid, int dim, const Eigen::VectorXd& values) : grid_(grid) {
    if (dim < 1) throw std::invalid_argument("drift table: dimension must be >= 1");
    if (values.size() != grid.steps + 1)
        throw std::invalid_argument(
            fmt::format("drift table: expected {} grid values, got {}", grid.steps + 1, values.size()));
    if (!values.allFinite() || (values.array() < 0.0).any())
        throw std::invalid_argument("drift table: values must be finite and non-negative");
    values_ = values.replicate(1, dim);
}

DriftTable DriftTable::zero(TimeGrid grid, int dim) { return {grid, dim, Eigen::VectorXd::Zero(grid.steps + 1)}; }

DriftTable DriftTable::constant(TimeGrid grid, int dim, double value) {
    return {grid, dim, Eigen::VectorXd::Constant(grid.steps + 1, value)};
}

DriftTable DriftTable::override_components(TimeGrid grid, Eigen::MatrixXd values) {
    if (values.rows() != grid.steps + 1 || values.cols() < 1)
        throw std::invalid_argument("drift table override: expected (K+1) x d values");
    if (!values.allFinite()) throw std::invalid_argument("drift table override: values must be finite");
    DriftTable t;
    t.grid_ = grid;
    t.values_ = std::move(values);
    t.extension_ = true;
    return t;
}

DriftTable DriftTable::coarsen(int factor) const {
    if (factor < 1 || grid_.steps % factor != 0)
        throw std::invalid_argument(fmt::format("drift table: cannot coarsen {} steps by {}", grid_.steps, factor));
    const TimeGrid coarse(grid_.horizon, grid_.steps / factor);
    Eigen::MatrixXd v(coarse.steps + 1, values_.cols());
    for (int k = 0; k <= coarse.steps; ++k) v.row(k) = values_.row(k * factor);
    DriftTable t;
    t.grid_ = coarse;
    t.values_ = std::move(v);
    t.extension_ = extension_;
    return t;
}

PathEnsemble sample_brownian(const TimeGrid& grid, int dim, std::size_t paths, std::uint64_t seed, unsigned threads,
                             StreamKind stream) {
    if (paths < 1) throw std::invalid_argument("sample_brownian: need at least one path");
    if (dim < 1) throw std::invalid_argument("sample_brownian: dimension must be >= 1");
    PathEnsemble e;
    e.grid = grid;
    e.dim = dim;
    e.increments.resize(grid.steps * dim, static_cast<Eigen::Index>(paths));
    e.flagged.assign(paths, 0);
    const double sd = std::sqrt(grid.dt());
    parallel_for(paths, threads, [&](std::size_t m) {
        auto engine = keyed_engine(seed, stream, m);
        std::normal_distribution<double> normal(0.0, sd);
        auto col = e.increments.col(static_cast<Eigen::Index>(m));
        for (Eigen::Index r = 0; r < col.size(); ++r) col(r) = normal(engine);
    });
    return e;
}

namespace {

PathEnsemble euler_maruyama(const SdeCoefficients& coeffs, const DriftTable* h, const Eigen::VectorXd& z0,
                            PathEnsemble ensemble, unsigned threads) {
    const int d = ensemble.dim;
    if (coeffs.dim != d || z0.size() != d)
        throw std::invalid_argument(fmt::format("simulate: ensemble dimension {}, coefficients {}, z0 {}", d,
                                                coeffs.dim, z0.size()));
    if (h && (!(h->grid() == ensemble.grid) || h->dim() != d))
        throw std::invalid_argument("simulate: drift table does not match the ensemble grid");
    const int K = ensemble.grid.steps;
    const double dt = ensemble.grid.dt();
    ensemble.states.resize((K + 1) * d, ensemble.increments.cols());
    ensemble.flagged.assign(ensemble.paths(), 0);
    parallel_for(ensemble.paths(), threads, [&](std::size_t m) {
        const auto col = static_cast<Eigen::Index>(m);
        Eigen::VectorXd z = z0;
        ensemble.states.col(col).head(d) = z;
        for (int k = 0; k < K; ++k) {
            const Eigen::MatrixXd s = coeffs.sigma(z);
            Eigen::VectorXd b = coeffs.drift(z);
            if (h) {
                const Eigen::VectorXd hk = h->at(k);
                if ((hk.array() != 0.0).any()) b -= s * hk;
            }
            z += s * ensemble.increments.col(col).segment(k * d, d) + b * dt;
            if (!z.allFinite() || z.cwiseAbs().maxCoeff() > kExplosionThreshold) {
                ensemble.flagged[m] = 1;
                ensemble.states.col(col).segment((k + 1) * d, (K - k) * d).setConstant(
                    std::numeric_limits<double>::quiet_NaN());
                return;
            }
            ensemble.states.col(col).segment((k + 1) * d, d) = z;
        }
    });
    return ensemble;
}

}  // namespace

PathEnsemble simulate_base(const SdeCoefficients& coeffs, const Eigen::VectorXd& z0, PathEnsemble ensemble,
                           unsigned threads) {
    return euler_maruyama(coeffs, nullptr, z0, std::move(ensemble), threads);
}

PathEnsemble simulate_modified(const SdeCoefficients& coeffs, const DriftTable& h, const Eigen::VectorXd& z0,
                               PathEnsemble ensemble, unsigned threads) {
    return euler_maruyama(coeffs, &h, z0, std::move(ensemble), threads);
}

PathEnsemble simulate_example2(PathEnsemble ensemble) {
    const int d = ensemble.dim;
    const int K = ensemble.grid.steps;
    const double dt = ensemble.grid.dt();
    const Eigen::MatrixXd B = ensemble.brownian_path();
    ensemble.states.resize((K + 1) * d, ensemble.increments.cols());
    ensemble.states.topRows(d).setZero();
    ensemble.flagged.assign(ensemble.paths(), 0);
    for (int k = 0; k < K; ++k) {
        ensemble.states.middleRows((k + 1) * d, d) =
            ensemble.states.middleRows(k * d, d) +
            2.0 * B.middleRows(k * d, d).cwiseProduct(ensemble.increments.middleRows(k * d, d));
        ensemble.states.middleRows((k + 1) * d, d).array() += dt;
    }
    for (std::size_t m = 0; m < ensemble.paths(); ++m) {
        const auto c = ensemble.states.col(static_cast<Eigen::Index>(m));
        if (!c.allFinite() || c.cwiseAbs().maxCoeff() > kExplosionThreshold) ensemble.flagged[m] = 1;
    }
    ensemble.aux["Z_exact"] = B.cwiseAbs2();
    ensemble.aux["B"] = B;
    return ensemble;
}

PathEnsemble coarsen(const PathEnsemble& ensemble, int factor) {
    const int K = ensemble.grid.steps;
    if (factor < 1 || K % factor != 0)
        throw std::invalid_argument(fmt::format("coarsen: cannot coarsen {} steps by {}", K, factor));
    const int d = ensemble.dim;
    PathEnsemble out;
    out.grid = TimeGrid(ensemble.grid.horizon, K / factor);
    out.dim = d;
    out.increments = Eigen::MatrixXd::Zero(out.grid.steps * d, ensemble.increments.cols());
    for (int k = 0; k < K; ++k) out.increments.middleRows((k / factor) * d, d) += ensemble.increments.middleRows(k * d, d);
    out.flagged.assign(ensemble.paths(), 0);
    return out;
}

PathEnsemble with_increments(const PathEnsemble& ensemble, Eigen::MatrixXd increments) {
    if (increments.rows() != ensemble.increments.rows() || increments.cols() != ensemble.increments.cols())
        throw std::invalid_argument("with_increments: shape mismatch");
    PathEnsemble out;
    out.grid = ensemble.grid;
    out.dim = ensemble.dim;
    out.increments = std::move(increments);
    out.flagged.assign(ensemble.paths(), 0);
    return out;
}

void write_ensemble_csv(std::ostream& out, const PathEnsemble& e) {
    const int d = e.dim;
    out << "path,k,t";
    for (int i = 0; i < d; ++i) out << ",z" << i + 1;
    for (int i = 0; i < d; ++i) out << ",dB" << i + 1;
    out << '\n';
    for (std::size_t m = 0; m < e.paths(); ++m) {
        for (int k = 0; k <= e.grid.steps; ++k) {
            fmt::print(out, "{},{},{}", m, k, e.grid.time(k));
            for (int i = 0; i < d; ++i) fmt::print(out, ",{}", e.state(m, k, i));
            for (int i = 0; i < d; ++i) {
                if (k < e.grid.steps)
                    fmt::print(out, ",{}", e.increment(m, k, i));
                else
                    out << ',';
            }
            out << '\n';
        }
    }
}

void write_ensemble_summary_csv(std::ostream& out, const PathEnsemble& e) {
    const int d = e.dim;
    out << 't';
    for (int i = 0; i < d; ++i) out << ",mean" << i + 1 << ",var" << i + 1;
    out << '\n';
    std::vector<double> values(e.paths());
    for (int k = 0; k <= e.grid.steps; ++k) {
        fmt::print(out, "{}", e.grid.time(k));
        for (int i = 0; i < d; ++i) {
            for (std::size_t m = 0; m < e.paths(); ++m) values[m] = e.flagged[m] ? 0.0 : e.state(m, k, i);
            const auto est = mean_estimate(values, e.flagged);
            const double var = est.count > 1 ? est.std_error * est.std_error * static_cast<double>(est.count) : 0.0;
            fmt::print(out, ",{},{}", est.mean, var);
        }
        out << '\n';
    }
}

}  // namespace hslab
