#pragma once

#include <Eigen/Dense>

#include <iosfwd>
#include <span>
#include <vector>

#include "hslab/sde.hpp"
#include "hslab/stats.hpp"

namespace hslab {

/// h(t_k) = sqrt(mean over paths of ||X_{t_k}||^2), with the standard error of
/// the mean square and of h (delta method).
struct DriftEstimate {
    DriftTable table;
    Eigen::VectorXd mean_square;
    Eigen::VectorXd mean_square_error;
    Eigen::VectorXd std_error;
};

/// `norms_squared` is (K+1) x M: ||X_{t_k}||^2_{-p-1} for each grid time and path.
/// Flagged paths are skipped. Every component of the table gets the same h.
DriftEstimate estimate_h(const Eigen::MatrixXd& norms_squared, const TimeGrid& grid, int dim,
                         std::span<const unsigned char> flagged = {});

/// log M_T = sum_j sum_k h^j(t_k) dB^j_k - 1/2 sum_j sum_k h^j(t_k)^2 dt, per path.
Eigen::VectorXd log_exponential_martingale(const PathEnsemble& ensemble, const DriftTable& h, unsigned threads = 0);

struct NovikovEstimate {
    double log_value = 0.0;
    double value = 1.0;
    bool overflow = false;
};

/// exp(1/2 sum_j sum_k h^j(t_k)^2 dt), i.e. exp((d/2) int h^2) for equal components.
NovikovEstimate novikov_estimate(const DriftTable& h);

struct WeightedEstimate {
    double mean = 0.0;
    double std_error = 0.0;
    double effective_sample_size = 0.0;
};

/// sum w v / sum w with the delta-method standard error
/// sqrt(sum w^2 (v - mean)^2) / sum w and ESS = (sum w)^2 / sum w^2.
/// Entries with a set mask are skipped.
WeightedEstimate weighted_expectation(std::span<const double> values, std::span<const double> weights,
                                      std::span<const unsigned char> excluded = {});
/// Same with weights given as logs; they are shifted by their maximum before exponentiation.
WeightedEstimate weighted_expectation_log(std::span<const double> values, std::span<const double> log_weights,
                                          std::span<const unsigned char> excluded = {});

/// The measure change dQ/dP = M_T built from a frozen drift table.
struct MeasureChange {
    DriftTable drift;
    Eigen::VectorXd log_weights;
    std::vector<unsigned char> overflow;  // exp(log weight) not representable
    NovikovEstimate novikov;
    MeanEstimate martingale_mean;
    double effective_sample_size = 0.0;

    Eigen::VectorXd weights() const { return log_weights.array().exp().matrix(); }
};

MeasureChange measure_change(const PathEnsemble& ensemble, const DriftTable& h, unsigned threads = 0);

/// dB^_k = dB_k - h(t_k) dt.
Eigen::MatrixXd transform_increments(const PathEnsemble& ensemble, const DriftTable& h);
/// The ensemble driven by the transformed increments (trajectories dropped).
PathEnsemble transform_bm(const PathEnsemble& ensemble, const DriftTable& h);

/// CSV tables: "t,h" with one column per component beyond the first
/// (h2, h3, ...) only for extension tables; "path,log_weight"; and the
/// one-row summary "novikov_estimate,martingale_mean,stderr,effective_sample_size".
void write_h_table(std::ostream& out, const DriftTable& h);
void write_log_weights(std::ostream& out, const MeasureChange& change);
void write_girsanov_summary(std::ostream& out, const MeasureChange& change);

}  // namespace hslab
