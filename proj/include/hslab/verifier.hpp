#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "hslab/expansion.hpp"
#include "hslab/girsanov.hpp"
#include "hslab/sde.hpp"
#include "hslab/spde_operators.hpp"
#include "hslab/stats.hpp"
#include "hslab/test_functions.hpp"

namespace hslab {

/// X_t = tau_{Z_t} phi along every path of an ensemble with trajectories.
/// Holds a reference to the ensemble, which must outlive it.
class LiftedProcess {
public:
    LiftedProcess(const PathEnsemble& z, Profile phi);

    const PathEnsemble& ensemble() const { return *z_; }
    const TimeGrid& grid() const { return z_->grid; }
    const Profile& profile() const { return phi_; }
    std::size_t paths() const { return z_->paths(); }

    /// tau_{Z_{t_k}} phi; exact for a delta profile.
    Profile at(std::size_t path, int step) const;
    HermiteExpansion expansion(std::size_t path, int step, const BasisTruncation& truncation) const;
    double pair_with(std::size_t path, int step, const HermiteExpansion& psi) const;

private:
    const PathEnsemble* z_;
    Profile phi_;
};

/// ||X_{t_k}||_q^2 for every grid time and path, as (K+1) x M. Flagged paths get NaN.
Eigen::MatrixXd lifted_norms_squared(const LiftedProcess& x, double q, int max_order, unsigned threads = 0);

/// E ||delta_{B_t}||_q^2 for one-dimensional Brownian motion, by Gauss-Hermite
/// quadrature against the N(0, t) density at truncation N.
double brownian_delta_mean_square(double t, double q, int max_order);

struct StepContext {
    std::size_t path = 0;
    int step = 0;
    double time = 0.0;
    const PathEnsemble* ensemble = nullptr;
};

/// Maps the state X_{t_k} (and the step context, for coefficients read along
/// the path) to a distribution.
using StateOperator = std::function<HermiteExpansion(const HermiteExpansion&, const StepContext&)>;

/// Weak-form residuals R_psi(t) = <X_t, psi> - <X_0, psi> - sum <drift(X), psi> dt
/// - sum_j sum <diffusion_j(X), psi> dB^j on one grid.
struct ResidualReport {
    TimeGrid grid;
    std::vector<std::string> functions;
    Eigen::MatrixXd terminal;  // paths x panel: R_psi(T)
    Eigen::MatrixXd sup;       // paths x panel: max_k |R_psi(t_k)|
    std::vector<double> path_mean_abs;  // panel mean of |R_psi(T)| per path
    std::vector<unsigned char> excluded;
    MeanEstimate mean_abs;
    MeanEstimate sup_mean;
    std::vector<MeanEstimate> mean_abs_per_function;
    std::vector<MeanEstimate> signed_mean_per_function;

    double dt() const { return grid.dt(); }
};

ResidualReport spde_residual(const LiftedProcess& x, const Eigen::MatrixXd& increments, const StateOperator& drift,
                             const std::vector<StateOperator>& diffusion, const std::vector<TestFunction>& panel,
                             int max_order, unsigned threads = 0);

/// Residual of the modified SPDE dX = (L + L_hat(h)) dt + A dB for X = tau_{Z~} phi,
/// where `z_tilde` must come from simulate_modified with the pulled-back
/// coefficients of `field` and the same h; a mismatch is rejected.
ResidualReport ito_translation_check(const PathEnsemble& z_tilde, const CoefficientField& field, const DriftTable& h,
                                     const std::vector<TestFunction>& panel, int max_order, unsigned threads = 0);

/// Empirical order of mean |R(T)| in dt.
struct ConvergenceReport {
    std::vector<double> dts;
    std::vector<double> means;
    std::vector<double> std_errors;
    std::vector<double> halving_orders;  // log2(mean(dt) / mean(dt/2)) per consecutive pair
    SlopeEstimate fit;                    // log2 mean against log2 dt
    double ci_low = 0.0;
    double ci_high = 0.0;

    /// Fitted order and every halving order inside [lo, hi].
    bool within(double lo, double hi) const;
};

ConvergenceReport residual_convergence(std::span<const ResidualReport> levels);

/// Per-path difference of panel-mean |R(T)| between two reports on the same paths.
struct PairedComparison {
    MeanEstimate difference;
    double scale = 0.0;  // mean |R(T)| of the first report
    /// |mean| <= sigmas * stderr, or the two agree to rounding (|mean| <= 1e-12 * scale).
    bool agree(double sigmas) const;
};

PairedComparison paired_comparison(const ResidualReport& a, const ResidualReport& b);

/// lambda = E sup_t ||X_t||^2 (mean of pathwise sups) and H2 = sup_t E ||X_t||^2.
struct Assumption4Report {
    MeanEstimate lambda;
    MeanEstimate h2;
    int h2_step = 0;
    bool ordered = false;  // h2 <= lambda
};

Assumption4Report assumption4_check(const Eigen::MatrixXd& norms_squared, std::span<const unsigned char> flagged = {});

struct LawTestReport {
    double statistic = 0.0;
    double critical = 0.0;
    double level = 0.05;
    bool pass = false;
    double effective_size_p = 0.0;
    double effective_size_q = 0.0;
    int replicates = 0;
};

/// Kolmogorov-Smirnov distance between the empirical CDF of samples_p and
/// the weighted empirical CDF of samples_q, with a centred bootstrap
/// (both samples resampled, weights travel with their points) for the
/// critical value at `level`.
LawTestReport law_equality_test(std::span<const double> samples_p, std::span<const double> samples_q,
                                std::span<const double> weights_q, double level = 0.05, int replicates = 1000,
                                std::uint64_t seed = 1, unsigned threads = 0);

/// Rows "dt,mean_abs_residual,stderr,n_paths".
void write_residual_table(std::ostream& out, std::span<const ResidualReport> levels);

}  // namespace hslab
