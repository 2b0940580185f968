#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hslab/expansion.hpp"

namespace hslab {

/// One entry sigma_ij or b_i of the SPDE data.
///
/// A functional entry is an element f of S_p acting on S_{-p} by the pairing
/// y -> <y, f>. A constant entry returns its value for every y; it stands in
/// for the constant functional, which is not an element of any S_p.
class Coefficient {
public:
    static Coefficient constant(double value);
    static Coefficient functional(HermiteExpansion f);

    bool is_constant() const { return !functional_.has_value(); }
    double constant_value() const { return constant_; }
    const HermiteExpansion& expansion() const { return *functional_; }

    double evaluate(const HermiteExpansion& y) const;
    double evaluate(const DeltaFamily& y) const;
    double evaluate(const Profile& y) const;

private:
    double constant_ = 0.0;
    std::optional<HermiteExpansion> functional_;
};

/// The SPDE data: sigma (d x d), b (d), the regularity p and the base profile phi.
struct CoefficientField {
    int dim = 1;
    double p = 0.0;
    std::vector<Coefficient> sigma;  // row-major
    std::vector<Coefficient> drift;
    Profile base = DeltaFamily{Eigen::VectorXd::Zero(1)};

    const Coefficient& sigma_at(int i, int j) const { return sigma[static_cast<std::size_t>(i * dim + j)]; }
    const Coefficient& drift_at(int i) const { return drift[static_cast<std::size_t>(i)]; }

    /// Field whose entries are all constants.
    static CoefficientField constant(const Eigen::MatrixXd& sigma, const Eigen::VectorXd& drift, double p,
                                     Profile base);

    /// Throws on inconsistent sizes or on a functional entry without a finite p-norm.
    void validate() const;
};

/// Least-squares fit of `value` on [-window, window] by Hermite functions of
/// order <= N/d, tensored over the axes:
/// an element of S_p that acts like the constant functional on deltas in the window.
HermiteExpansion constant_surrogate(double value, double window, const BasisTruncation& truncation);

Eigen::MatrixXd sigma_eval(const CoefficientField& field, const HermiteExpansion& y);
Eigen::MatrixXd sigma_eval(const CoefficientField& field, const Profile& y);
Eigen::VectorXd b_eval(const CoefficientField& field, const HermiteExpansion& y);
Eigen::VectorXd b_eval(const CoefficientField& field, const Profile& y);

/// L(y) = 1/2 sum_ij (sigma sigma^t)_ij d2_ij y - sum_i b_i(y) d_i y.
HermiteExpansion apply_L(const CoefficientField& field, const HermiteExpansion& y);
/// A_j(y) = -sum_i sigma_ij(y) d_i y; `j` is 0-based.
HermiteExpansion apply_A(const CoefficientField& field, const HermiteExpansion& y, int j);
/// Girsanov drift term -sum_j h^j A_j(y).
HermiteExpansion apply_L_hat(const CoefficientField& field, const HermiteExpansion& y, const Eigen::VectorXd& h);

/// Coefficients of a d-dimensional SDE dZ = sigma(Z) dB + drift(Z) dt.
struct SdeCoefficients {
    int dim = 1;
    std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> sigma;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> drift;
};

/// sigma_bar(rho) = sigma(tau_rho phi), b_bar(rho) = b(tau_rho phi).
SdeCoefficients pullback_coeffs(const CoefficientField& field);

/// Constant coefficients, e.g. sigma = I, b = 0 for Brownian motion.
SdeCoefficients constant_coeffs(const Eigen::MatrixXd& sigma, const Eigen::VectorXd& drift);

/// Empirical constants of the ball bound ||L y||_{-p-1} <= C1 ||y||_{-p},
/// ||A_j y||_{-p-1} <= C2 ||y||_{-p} over sampled y with ||y||_{-p} <= radius.
struct BallBound {
    double radius = 0.0;
    double c1 = 0.0;
    double c2 = 0.0;
    std::size_t samples = 0;
};

/// Samples `samples` points per radius (uniform direction in the -p geometry,
/// uniform radius fraction). The estimate at each radius is the maximum over
/// the samples of that radius and of every smaller radius in the list, so it
/// is non-decreasing in the radius.
std::vector<BallBound> ball_bound_check(const CoefficientField& field, std::span<const double> radii,
                                        int samples, std::uint64_t seed, int max_order);

/// Largest difference quotient of sigma_bar and b_bar (Frobenius / Euclidean)
/// between neighbouring points of a grid on [-radius, radius] along each axis.
/// A diagnostic for local Lipschitz continuity, not a certificate.
double local_lipschitz_estimate(const SdeCoefficients& coeffs, double radius, int grid);

/// Coefficient entry from text: "constant <c>", "hermite <n1> ... <nd>",
/// "gaussian <center> <width> <amplitude>" or "surrogate <value> <window>".
/// Functional entries are expanded on `truncation`.
Coefficient parse_coefficient(const std::string& spec, const BasisTruncation& truncation);

}  // namespace hslab
