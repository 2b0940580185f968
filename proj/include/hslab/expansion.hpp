#pragma once

#include <Eigen/Dense>

#include <iosfwd>
#include <variant>
#include <vector>

#include "hslab/multi_index.hpp"

namespace hslab {

/// A tempered distribution held as its Hermite coefficients <u, h_n> over a
/// graded truncation.
///
/// `regularity()` is an informational tag naming the space S_q the value is
/// meant to live in. `truncation_error()` accumulates the l2 mass of
/// coefficients that operators had to drop at the truncation boundary.
class HermiteExpansion {
public:
    HermiteExpansion(BasisTruncation truncation, Eigen::VectorXd coeffs, double regularity = 0.0,
                     double truncation_error = 0.0);

    static HermiteExpansion zero(const BasisTruncation& truncation, double regularity = 0.0);
    static HermiteExpansion basis_element(const BasisTruncation& truncation, const MultiIndex& n);

    const BasisTruncation& truncation() const { return truncation_; }
    int dim() const { return truncation_.dim(); }
    int max_order() const { return truncation_.max_order(); }
    const Eigen::VectorXd& coeffs() const { return coeffs_; }
    double coeff(const MultiIndex& n) const;
    double regularity() const { return regularity_; }
    double truncation_error() const { return truncation_error_; }

    HermiteExpansion with_regularity(double regularity) const;
    /// Same coefficients on a larger or smaller truncation (zero-padded or cut).
    HermiteExpansion resized(int max_order) const;

    HermiteExpansion& operator+=(const HermiteExpansion& other);
    HermiteExpansion& operator-=(const HermiteExpansion& other);
    HermiteExpansion& operator*=(double s);

private:
    BasisTruncation truncation_;
    Eigen::VectorXd coeffs_;
    double regularity_;
    double truncation_error_;
};

HermiteExpansion operator+(HermiteExpansion a, const HermiteExpansion& b);
HermiteExpansion operator-(HermiteExpansion a, const HermiteExpansion& b);
HermiteExpansion operator*(double s, HermiteExpansion a);
HermiteExpansion operator-(HermiteExpansion a);

/// delta_x, kept lazily as its location; translation acts exactly on it.
struct DeltaFamily {
    Eigen::VectorXd location;
};

/// Either a lazy delta or an explicit expansion.
using Profile = std::variant<DeltaFamily, HermiteExpansion>;

int profile_dim(const Profile& phi);
HermiteExpansion materialize(const Profile& phi, const BasisTruncation& truncation);

/// <f, g>_p = sum_n (2|n|+d)^{2p} <f,h_n><g,h_n>, over the union of both
/// truncations (the shorter one is zero-padded).
double sobolev_inner(const HermiteExpansion& f, const HermiteExpansion& g, double p);
double norm_p(const HermiteExpansion& u, double p);
/// The L2 duality pairing, i.e. sobolev_inner at p = 0.
double pair(const HermiteExpansion& u, const HermiteExpansion& psi);

/// Coefficients <delta_x, h_n> = h_n(x).
HermiteExpansion delta_expansion(const Eigen::VectorXd& x, const BasisTruncation& truncation);
/// ||delta_x||_p^2 at the given truncation, without materializing for d = 1.
double delta_norm_squared(const Eigen::VectorXd& x, double p, const BasisTruncation& truncation);
double delta_norm_squared(double x, double p, int max_order);

/// Distributional derivative along `axis` (0-based). The output keeps the input
/// truncation; the band pushed past it is recorded in truncation_error().
HermiteExpansion derivative(const HermiteExpansion& u, int axis);
HermiteExpansion second_derivative(const HermiteExpansion& u, int axis_i, int axis_j);

/// T(x)_{mn} = int h_n(y - x) h_m(y) dy for 0 <= m, n <= max_order.
Eigen::MatrixXd translation_matrix(double x, int max_order);

HermiteExpansion translate(const HermiteExpansion& u, const Eigen::VectorXd& x);
DeltaFamily translate(const DeltaFamily& u, const Eigen::VectorXd& x);
Profile translate(const Profile& u, const Eigen::VectorXd& x);

/// ||delta_x||_p at truncation N plus the asymptotic tail
/// sum_{n>N} (2n+1)^{2p} / (pi sqrt(2n+1-x^2)), valid for d = 1 and p < -1/4.
double delta_norm_tail_estimate(double x, double p, int max_order);

struct DeltaNormSurvey {
    std::vector<double> points;
    std::vector<double> norms;
    double max_norm = 0.0;
    double argmax = 0.0;
};

/// ||delta_x||_p (d = 1) on `grid` equispaced points of [-xmax, xmax].
DeltaNormSurvey delta_norm_survey(double p, double xmax, int grid, int max_order);

/// Empirical translation bound ||tau_x u||_q <= P(|x|) ||u||_q.
///
/// P(t) = scale * (1 + t^2)^{degree/2} has non-negative coefficients and is
/// the smallest such multiple covering every sampled ratio. The unconstrained
/// least-squares polynomial of the same degree is reported alongside.
struct TranslationBound {
    int degree = 0;
    double scale = 0.0;
    Eigen::VectorXd least_squares;  // coefficients of t^0..t^degree
    std::vector<double> points;
    std::vector<double> ratios;

    double envelope(double t) const;
};

TranslationBound fit_translation_bound(const HermiteExpansion& u, double q, const std::vector<double>& points);

/// Flat CSV record: a version line, "d,N,p", then one "k,coeff" row per graded
/// index. Doubles are written in shortest round-trip form, so write/read is
/// bit-exact.
void write_expansion(std::ostream& out, const HermiteExpansion& u);
HermiteExpansion read_expansion(std::istream& in);

}  // namespace hslab
