#include "hslab/expansion.hpp"

#include <fmt/format.h>
#include <fmt/ostream.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <istream>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <string>

#include "hslab/hermite.hpp"
#include "hslab/quadrature.hpp"
#include "hslab/stats.hpp"

namespace hslab {

namespace {

void require_same_dim(int a, int b, const char* what) {
    if (a != b) throw std::invalid_argument(fmt::format("{}: dimension mismatch ({} vs {})", what, a, b));
}

double combine_errors(double a, double b) { return std::hypot(a, b); }

// (2g + d)^{2p} for g = 0..N.
Eigen::VectorXd grade_weights(int d, int N, double p) {
    Eigen::VectorXd w(N + 1);
    for (int g = 0; g <= N; ++g) w(g) = std::pow(2.0 * g + d, 2.0 * p);
    return w;
}

// Weighted sum of a[k]*b[k] for k < n, ordered from the largest weight down.
double weighted_dot(const BasisTruncation& t, const double* a, const double* b, std::size_t n, double p) {
    const Eigen::VectorXd w = grade_weights(t.dim(), t.max_order(), p);
    CompensatedSum sum;
    if (p < 0) {
        for (std::size_t k = 0; k < n; ++k) sum.add(w(t.order(k)) * a[k] * b[k]);
    } else {
        for (std::size_t k = n; k-- > 0;) sum.add(w(t.order(k)) * a[k] * b[k]);
    }
    return sum.value();
}

int quadrature_nodes_for(int max_order) { return std::min(kMaxQuadratureNodes, 2 * max_order + 16); }

}  // namespace

// --- HermiteExpansion -------------------------------------------------------

HermiteExpansion::HermiteExpansion(BasisTruncation truncation, Eigen::VectorXd coeffs, double regularity,
                                   double truncation_error)
    : truncation_(std::move(truncation)),
      coeffs_(std::move(coeffs)),
      regularity_(regularity),
      truncation_error_(truncation_error) {
    if (static_cast<std::size_t>(coeffs_.size()) != truncation_.size())
        throw std::invalid_argument(fmt::format("HermiteExpansion: {} coefficients for a truncation of size {}",
                                                coeffs_.size(), truncation_.size()));
}

HermiteExpansion HermiteExpansion::zero(const BasisTruncation& truncation, double regularity) {
    return {truncation, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(truncation.size())), regularity};
}

HermiteExpansion HermiteExpansion::basis_element(const BasisTruncation& truncation, const MultiIndex& n) {
    auto out = zero(truncation);
    out.coeffs_(static_cast<Eigen::Index>(truncation.offset(n))) = 1.0;
    return out;
}

double HermiteExpansion::coeff(const MultiIndex& n) const {
    if (n.order() > max_order()) return 0.0;
    return coeffs_(static_cast<Eigen::Index>(truncation_.offset(n)));
}

HermiteExpansion HermiteExpansion::with_regularity(double regularity) const {
    HermiteExpansion out = *this;
    out.regularity_ = regularity;
    return out;
}

HermiteExpansion HermiteExpansion::resized(int max_order) const {
    BasisTruncation t(dim(), max_order);
    Eigen::VectorXd c = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(t.size()));
    const auto keep = static_cast<Eigen::Index>(std::min(t.size(), truncation_.size()));
    c.head(keep) = coeffs_.head(keep);
    double dropped = truncation_error_;
    if (keep < coeffs_.size()) dropped = combine_errors(dropped, coeffs_.tail(coeffs_.size() - keep).norm());
    return {t, std::move(c), regularity_, dropped};
}

HermiteExpansion& HermiteExpansion::operator+=(const HermiteExpansion& other) {
    require_same_dim(dim(), other.dim(), "HermiteExpansion addition");
    if (other.max_order() > max_order()) *this = resized(other.max_order());
    coeffs_.head(other.coeffs_.size()) += other.coeffs_;
    regularity_ = std::min(regularity_, other.regularity_);
    truncation_error_ = combine_errors(truncation_error_, other.truncation_error_);
    return *this;
}

HermiteExpansion& HermiteExpansion::operator-=(const HermiteExpansion& other) {
    require_same_dim(dim(), other.dim(), "HermiteExpansion subtraction");
    if (other.max_order() > max_order()) *this = resized(other.max_order());
    coeffs_.head(other.coeffs_.size()) -= other.coeffs_;
    regularity_ = std::min(regularity_, other.regularity_);
    truncation_error_ = combine_errors(truncation_error_, other.truncation_error_);
    return *this;
}

HermiteExpansion& HermiteExpansion::operator*=(double s) {
    coeffs_ *= s;
    truncation_error_ *= std::abs(s);
    return *this;
}

HermiteExpansion operator+(HermiteExpansion a, const HermiteExpansion& b) { return a += b; }
HermiteExpansion operator-(HermiteExpansion a, const HermiteExpansion& b) { return a -= b; }
HermiteExpansion operator*(double s, HermiteExpansion a) { return a *= s; }
HermiteExpansion operator-(HermiteExpansion a) { return a *= -1.0; }

// --- profiles ----------------------------------------------------------------

int profile_dim(const Profile& phi) {
    if (const auto* d = std::get_if<DeltaFamily>(&phi)) return static_cast<int>(d->location.size());
    return std::get<HermiteExpansion>(phi).dim();
}

HermiteExpansion materialize(const Profile& phi, const BasisTruncation& truncation) {
    if (const auto* d = std::get_if<DeltaFamily>(&phi)) return delta_expansion(d->location, truncation);
    const auto& u = std::get<HermiteExpansion>(phi);
    require_same_dim(u.dim(), truncation.dim(), "materialize");
    return u.max_order() == truncation.max_order() ? u : u.resized(truncation.max_order());
}

// --- Sobolev calculus ---------------------------------------------------------

double sobolev_inner(const HermiteExpansion& f, const HermiteExpansion& g, double p) {
    require_same_dim(f.dim(), g.dim(), "sobolev_inner");
    const auto n = std::min(f.truncation().size(), g.truncation().size());
    const auto& t = f.max_order() <= g.max_order() ? f.truncation() : g.truncation();
    return weighted_dot(t, f.coeffs().data(), g.coeffs().data(), n, p);
}

double norm_p(const HermiteExpansion& u, double p) { return std::sqrt(sobolev_inner(u, u, p)); }

double pair(const HermiteExpansion& u, const HermiteExpansion& psi) { return sobolev_inner(u, psi, 0.0); }

HermiteExpansion delta_expansion(const Eigen::VectorXd& x, const BasisTruncation& truncation) {
    require_same_dim(static_cast<int>(x.size()), truncation.dim(), "delta_expansion");
    const int d = truncation.dim();
    const int N = truncation.max_order();
    if (d == 1) return {truncation, hermite_functions(N, x(0)), 0.0};
    Eigen::MatrixXd h(N + 1, d);
    for (int i = 0; i < d; ++i) h.col(i) = hermite_functions(N, x(i));
    Eigen::VectorXd c(static_cast<Eigen::Index>(truncation.size()));
    for (std::size_t k = 0; k < truncation.size(); ++k) {
        const auto& n = truncation.index(k);
        double v = 1.0;
        for (int i = 0; i < d; ++i) v *= h(n[i], i);
        c(static_cast<Eigen::Index>(k)) = v;
    }
    return {truncation, std::move(c), 0.0};
}

namespace {

// (2n+1)^{2p} for n = 0..N, cached per thread for repeated calls with the same (p, N)
const Eigen::VectorXd& weights_1d(double p, int max_order) {
    thread_local double cached_p = std::numeric_limits<double>::quiet_NaN();
    thread_local int cached_n = -1;
    thread_local Eigen::VectorXd w;
    if (cached_p != p || cached_n != max_order) {
        w.resize(max_order + 1);
        for (int n = 0; n <= max_order; ++n) w(n) = std::pow(2.0 * n + 1.0, 2.0 * p);
        cached_p = p;
        cached_n = max_order;
    }
    return w;
}

}  // namespace

double delta_norm_squared(double x, double p, int max_order) {
    thread_local Eigen::VectorXd h;
    hermite_functions(max_order, x, h);
    const Eigen::VectorXd& w = weights_1d(p, max_order);
    CompensatedSum sum;
    if (p < 0) {
        for (int n = 0; n <= max_order; ++n) sum.add(w(n) * h(n) * h(n));
    } else {
        for (int n = max_order; n >= 0; --n) sum.add(w(n) * h(n) * h(n));
    }
    return sum.value();
}

double delta_norm_squared(const Eigen::VectorXd& x, double p, const BasisTruncation& truncation) {
    require_same_dim(static_cast<int>(x.size()), truncation.dim(), "delta_norm_squared");
    if (truncation.dim() == 1) return delta_norm_squared(x(0), p, truncation.max_order());
    const auto u = delta_expansion(x, truncation);
    return sobolev_inner(u, u, p);
}

HermiteExpansion derivative(const HermiteExpansion& u, int axis) {
    if (axis < 0 || axis >= u.dim())
        throw std::out_of_range(fmt::format("derivative: axis {} outside [0, {})", axis, u.dim()));
    const auto& t = u.truncation();
    const auto& c = u.coeffs();
    Eigen::VectorXd out(c.size());
    CompensatedSum dropped;
    for (std::size_t k = 0; k < t.size(); ++k) {
        const double nk = t.index(k)[axis];
        double v = 0.0;
        if (const auto up = t.raised(k, axis); up != BasisTruncation::npos)
            v += std::sqrt((nk + 1.0) / 2.0) * c(up);
        else
            dropped.add((nk + 1.0) / 2.0 * c(static_cast<Eigen::Index>(k)) * c(static_cast<Eigen::Index>(k)));
        if (const auto down = t.lowered(k, axis); down != BasisTruncation::npos) v -= std::sqrt(nk / 2.0) * c(down);
        out(static_cast<Eigen::Index>(k)) = v;
    }
    return {t, std::move(out), u.regularity() - 0.5,
            combine_errors(u.truncation_error(), std::sqrt(std::max(0.0, dropped.value())))};
}

HermiteExpansion second_derivative(const HermiteExpansion& u, int axis_i, int axis_j) {
    return derivative(derivative(u, axis_j), axis_i);
}

// --- translation --------------------------------------------------------------

Eigen::MatrixXd translation_matrix(double x, int max_order) {
    if (max_order < 0) throw std::invalid_argument("translation_matrix: negative order");
    if (!std::isfinite(x)) throw std::domain_error("translation_matrix: non-finite shift");
    // y = s + x/2 centres the two Hermite factors symmetrically; the
    // integrand is then a polynomial in s times e^{-s^2}.
    const auto& rule = cached_gauss_hermite(quadrature_nodes_for(max_order));
    const int m = rule.size();
    Eigen::MatrixXd shifted(m, max_order + 1);
    Eigen::MatrixXd unshifted(m, max_order + 1);
    Eigen::VectorXd h;
    for (int k = 0; k < m; ++k) {
        hermite_functions(max_order, rule.nodes(k) - x / 2.0, h);
        shifted.row(k) = h.transpose();
        hermite_functions(max_order, rule.nodes(k) + x / 2.0, h);
        unshifted.row(k) = h.transpose();
    }
    return unshifted.transpose() * rule.scaled_weights.asDiagonal() * shifted;
}

HermiteExpansion translate(const HermiteExpansion& u, const Eigen::VectorXd& x) {
    require_same_dim(static_cast<int>(x.size()), u.dim(), "translate");
    const auto& t = u.truncation();
    const int N = t.max_order();
    Eigen::VectorXd c = u.coeffs();
    for (int axis = 0; axis < u.dim(); ++axis) {
        if (x(axis) == 0.0) continue;
        const Eigen::MatrixXd T = translation_matrix(x(axis), N);
        if (u.dim() == 1) {
            c = T * c;
            continue;
        }
        Eigen::VectorXd next = Eigen::VectorXd::Zero(c.size());
        for (std::size_t k = 0; k < t.size(); ++k) {
            // walk the line through index(k) along `axis` from its lowest point
            MultiIndex base = t.index(k);
            const int mk = base[axis];
            const int room = N - (base.order() - mk);
            base.entries[static_cast<std::size_t>(axis)] = 0;
            std::size_t j = t.offset(base);
            double acc = 0.0;
            for (int n = 0; n <= room; ++n) {
                acc += T(mk, n) * c(static_cast<Eigen::Index>(j));
                if (n < room) j = static_cast<std::size_t>(t.raised(j, axis));
            }
            next(static_cast<Eigen::Index>(k)) = acc;
        }
        c = std::move(next);
    }
    const double lost = std::sqrt(std::max(0.0, u.coeffs().squaredNorm() - c.squaredNorm()));
    return {t, std::move(c), u.regularity(), combine_errors(u.truncation_error(), lost)};
}

DeltaFamily translate(const DeltaFamily& u, const Eigen::VectorXd& x) {
    require_same_dim(static_cast<int>(x.size()), static_cast<int>(u.location.size()), "translate");
    return {u.location + x};
}

Profile translate(const Profile& u, const Eigen::VectorXd& x) {
    return std::visit([&](const auto& v) -> Profile { return translate(v, x); }, u);
}

// --- norms of deltas ------------------------------------------------------------

double delta_norm_tail_estimate(double x, double p, int max_order) {
    if (p >= -0.25) throw std::domain_error("delta_norm_tail_estimate: requires p < -1/4 (d = 1)");
    const double head = delta_norm_squared(x, p, max_order);
    // sum_{n>N} f(2n+1) ~ (1/2) int_{2N+2}^inf f(u) du with
    // f(u) = u^{2p} / (pi sqrt(u - x^2)) ~ u^{2p-1/2} (1 + x^2/(2u)) / pi
    const double U = 2.0 * max_order + 2.0;
    const double a = -2.0 * p - 0.5;
    const double tail = (std::pow(U, -a) / a + 0.5 * x * x * std::pow(U, -a - 1.0) / (a + 1.0)) /
                        (2.0 * std::numbers::pi);
    return std::sqrt(head + tail);
}

DeltaNormSurvey delta_norm_survey(double p, double xmax, int grid, int max_order) {
    if (grid < 1) throw std::invalid_argument("delta_norm_survey: grid must be >= 1");
    if (!(xmax >= 0.0)) throw std::invalid_argument("delta_norm_survey: xmax must be >= 0");
    DeltaNormSurvey s;
    s.points.resize(static_cast<std::size_t>(grid));
    s.norms.resize(static_cast<std::size_t>(grid));
    for (int i = 0; i < grid; ++i) {
        const double x = grid == 1 ? 0.0 : -xmax + 2.0 * xmax * i / (grid - 1);
        const double v = std::sqrt(delta_norm_squared(x, p, max_order));
        s.points[static_cast<std::size_t>(i)] = x;
        s.norms[static_cast<std::size_t>(i)] = v;
        if (i == 0 || v > s.max_norm) {
            s.max_norm = v;
            s.argmax = x;
        }
    }
    return s;
}

double TranslationBound::envelope(double t) const { return scale * std::pow(1.0 + t * t, degree / 2.0); }

TranslationBound fit_translation_bound(const HermiteExpansion& u, double q, const std::vector<double>& points) {
    if (u.dim() != 1) throw std::invalid_argument("fit_translation_bound: one-dimensional profiles only");
    if (points.empty()) throw std::invalid_argument("fit_translation_bound: no sample points");
    const double base = norm_p(u, q);
    if (base == 0.0) throw std::invalid_argument("fit_translation_bound: zero profile");
    TranslationBound b;
    b.degree = 2 * (static_cast<int>(std::floor(std::abs(q))) + 1);
    b.points = points;
    const auto n = static_cast<Eigen::Index>(points.size());
    Eigen::MatrixXd vander(n, b.degree + 1);
    Eigen::VectorXd rhs(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double x = points[static_cast<std::size_t>(i)];
        const double r = norm_p(translate(u, Eigen::VectorXd::Constant(1, x)), q) / base;
        b.ratios.push_back(r);
        b.scale = std::max(b.scale, r / std::pow(1.0 + x * x, b.degree / 2.0));
        double tp = 1.0;
        for (int j = 0; j <= b.degree; ++j, tp *= std::abs(x)) vander(i, j) = tp;
        rhs(i) = r;
    }
    b.least_squares = vander.colPivHouseholderQr().solve(rhs);
    return b;
}

// --- serialization ----------------------------------------------------------------

namespace {

constexpr const char* kExpansionMagic = "hermite_expansion,v1";

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const auto comma = line.find(',', start);
        out.push_back(line.substr(start, comma - start));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

template <typename T>
T parse_field(const std::string& s, int line) {
    T v{};
    const auto* end = s.data() + s.size();
    const auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc() || ptr != end)
        throw std::runtime_error(fmt::format("expansion record line {}: cannot parse '{}'", line, s));
    return v;
}

bool next_line(std::istream& in, std::string& line) {
    if (!std::getline(in, line)) return false;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
}

}  // namespace

void write_expansion(std::ostream& out, const HermiteExpansion& u) {
    fmt::print(out, "{}\nd,N,p\n{},{},{}\nk,coeff\n", kExpansionMagic, u.dim(), u.max_order(), u.regularity());
    for (Eigen::Index k = 0; k < u.coeffs().size(); ++k) fmt::print(out, "{},{}\n", k, u.coeffs()(k));
}

HermiteExpansion read_expansion(std::istream& in) {
    std::string line;
    int lineno = 0;
    auto expect = [&](const char* text) {
        ++lineno;
        if (!next_line(in, line) || line != text)
            throw std::runtime_error(fmt::format("expansion record line {}: expected '{}'", lineno, text));
    };
    expect(kExpansionMagic);
    expect("d,N,p");
    ++lineno;
    if (!next_line(in, line)) throw std::runtime_error("expansion record: missing header values");
    const auto head = split_csv(line);
    if (head.size() != 3) throw std::runtime_error(fmt::format("expansion record line {}: expected d,N,p", lineno));
    const BasisTruncation t(parse_field<int>(head[0], lineno), parse_field<int>(head[1], lineno));
    const double p = parse_field<double>(head[2], lineno);
    expect("k,coeff");
    Eigen::VectorXd c(static_cast<Eigen::Index>(t.size()));
    for (std::size_t k = 0; k < t.size(); ++k) {
        ++lineno;
        if (!next_line(in, line)) throw std::runtime_error(fmt::format("expansion record: truncated at line {}", lineno));
        const auto f = split_csv(line);
        if (f.size() != 2 || parse_field<std::size_t>(f[0], lineno) != k)
            throw std::runtime_error(fmt::format("expansion record line {}: expected row {}", lineno, k));
        c(static_cast<Eigen::Index>(k)) = parse_field<double>(f[1], lineno);
    }
    return {t, std::move(c), p};
}

}  // namespace hslab
