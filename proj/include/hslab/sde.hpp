#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "hslab/rng.hpp"
#include "hslab/spde_operators.hpp"

namespace hslab {

/// Uniform grid t_k = k T / K on [0, T].
struct TimeGrid {
    double horizon = 1.0;
    int steps = 1;

    TimeGrid() = default;
    TimeGrid(double horizon, int steps);

    double dt() const { return horizon / steps; }
    double time(int k) const { return k * horizon / steps; }
    bool operator==(const TimeGrid&) const = default;
};

/// M paths of d-dimensional Brownian increments and the trajectories driven by them.
///
/// Matrices hold one path per column. Increment rows are k*d + i for step k
/// and component i; trajectory rows are k*d + i for k = 0..K.
struct PathEnsemble {
    TimeGrid grid;
    int dim = 1;
    Eigen::MatrixXd increments;
    Eigen::MatrixXd states;
    std::map<std::string, Eigen::MatrixXd> aux;
    std::vector<unsigned char> flagged;

    std::size_t paths() const { return static_cast<std::size_t>(increments.cols()); }
    std::size_t flagged_count() const;

    double increment(std::size_t m, int k, int i) const {
        return increments(k * dim + i, static_cast<Eigen::Index>(m));
    }
    double state(std::size_t m, int k, int i) const { return states(k * dim + i, static_cast<Eigen::Index>(m)); }
    Eigen::VectorXd state_at(std::size_t m, int k) const {
        return states.col(static_cast<Eigen::Index>(m)).segment(k * dim, dim);
    }
    Eigen::VectorXd increment_at(std::size_t m, int k) const {
        return increments.col(static_cast<Eigen::Index>(m)).segment(k * dim, dim);
    }
    /// B_{t_k} for every path, as a (K+1)*d x M matrix of partial sums.
    Eigen::MatrixXd brownian_path() const;
};

/// Girsanov drift h(t_k), piecewise constant on [t_k, t_{k+1}).
///
/// Built from one scalar per grid time, every component gets the same value.
/// `override_components` replaces the table by arbitrary per-component values
/// and marks it as an extension.
class DriftTable {
public:
    /// Empty table (no grid times, no components).
    DriftTable() = default;
    DriftTable(TimeGrid grid, int dim, const Eigen::VectorXd& values);
    static DriftTable zero(TimeGrid grid, int dim);
    static DriftTable constant(TimeGrid grid, int dim, double value);
    static DriftTable override_components(TimeGrid grid, Eigen::MatrixXd values);

    const TimeGrid& grid() const { return grid_; }
    int dim() const { return static_cast<int>(values_.cols()); }
    bool is_extension() const { return extension_; }
    /// (K+1) x d table.
    const Eigen::MatrixXd& values() const { return values_; }
    Eigen::VectorXd at(int k) const { return values_.row(k).transpose(); }
    double component(int k, int j) const { return values_(k, j); }
    bool is_zero() const { return (values_.array() == 0.0).all(); }

    /// Value on the grid coarser by `factor` (left-endpoint sampling).
    DriftTable coarsen(int factor) const;

private:
    TimeGrid grid_;
    Eigen::MatrixXd values_;
    bool extension_ = false;
};

constexpr double kExplosionThreshold = 1e12;

/// Brownian increments for M paths; path m draws from keyed_engine(seed, stream, m).
PathEnsemble sample_brownian(const TimeGrid& grid, int dim, std::size_t paths, std::uint64_t seed,
                             unsigned threads = 0, StreamKind stream = StreamKind::Brownian);

/// Euler-Maruyama for dZ = sigma(Z) dB + b(Z) dt from z0 on the ensemble's increments.
PathEnsemble simulate_base(const SdeCoefficients& coeffs, const Eigen::VectorXd& z0, PathEnsemble ensemble,
                           unsigned threads = 0);

/// Euler-Maruyama for dZ = sigma(Z) dB + (b(Z) - sigma(Z) h(t)) dt.
PathEnsemble simulate_modified(const SdeCoefficients& coeffs, const DriftTable& h, const Eigen::VectorXd& z0,
                               PathEnsemble ensemble, unsigned threads = 0);

/// Z_{k+1} = Z_k + 2 B_k dB_k + dt componentwise, from Z_0 = 0. Stores B in
/// aux["B"] and the exact B^2 in aux["Z_exact"].
PathEnsemble simulate_example2(PathEnsemble ensemble);

/// Sums increments over blocks of `factor` steps; trajectories are dropped.
PathEnsemble coarsen(const PathEnsemble& ensemble, int factor);

/// Same paths with the increments replaced (trajectories dropped).
PathEnsemble with_increments(const PathEnsemble& ensemble, Eigen::MatrixXd increments);

/// One row per (path, step): path,k,t,z_1..z_d,dB_1..dB_d (dB empty at k = K).
void write_ensemble_csv(std::ostream& out, const PathEnsemble& ensemble);
/// One row per grid time: t, then mean and variance of each component over unflagged paths.
void write_ensemble_summary_csv(std::ostream& out, const PathEnsemble& ensemble);

}  // namespace hslab
