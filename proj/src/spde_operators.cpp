#include "hslab/spde_operators.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "hslab/hermite.hpp"
#include "hslab/rng.hpp"
#include "hslab/test_functions.hpp"

namespace hslab {

Coefficient Coefficient::constant(double value) {
    if (!std::isfinite(value)) throw std::invalid_argument("constant coefficient must be finite");
    Coefficient c;
    c.constant_ = value;
    return c;
}

Coefficient Coefficient::functional(HermiteExpansion f) {
    Coefficient c;
    c.functional_ = std::move(f);
    return c;
}

double Coefficient::evaluate(const HermiteExpansion& y) const {
    if (is_constant()) return constant_;
    if (y.dim() != functional_->dim())
        throw std::invalid_argument(
            fmt::format("coefficient evaluation: distribution of dimension {} vs functional of dimension {}",
                        y.dim(), functional_->dim()));
    return pair(y, *functional_);
}

double Coefficient::evaluate(const DeltaFamily& y) const {
    if (is_constant()) return constant_;
    return evaluate(delta_expansion(y.location, functional_->truncation()));
}

double Coefficient::evaluate(const Profile& y) const {
    return std::visit([this](const auto& v) { return evaluate(v); }, y);
}

CoefficientField CoefficientField::constant(const Eigen::MatrixXd& sigma, const Eigen::VectorXd& drift, double p,
                                            Profile base) {
    CoefficientField f;
    f.dim = static_cast<int>(drift.size());
    f.p = p;
    if (sigma.rows() != f.dim || sigma.cols() != f.dim)
        throw std::invalid_argument("constant field: sigma must be d x d");
    for (int i = 0; i < f.dim; ++i)
        for (int j = 0; j < f.dim; ++j) f.sigma.push_back(Coefficient::constant(sigma(i, j)));
    for (int i = 0; i < f.dim; ++i) f.drift.push_back(Coefficient::constant(drift(i)));
    f.base = std::move(base);
    f.validate();
    return f;
}

void CoefficientField::validate() const {
    if (dim < 1) throw std::invalid_argument("coefficient field: dimension must be >= 1");
    if (!(p >= 0.0)) throw std::invalid_argument("coefficient field: p must be >= 0");
    if (sigma.size() != static_cast<std::size_t>(dim * dim))
        throw std::invalid_argument(fmt::format("coefficient field: expected {} sigma entries, got {}", dim * dim,
                                                sigma.size()));
    if (drift.size() != static_cast<std::size_t>(dim))
        throw std::invalid_argument(
            fmt::format("coefficient field: expected {} drift entries, got {}", dim, drift.size()));
    if (profile_dim(base) != dim) throw std::invalid_argument("coefficient field: base profile has wrong dimension");
    auto check = [&](const Coefficient& c, const char* what) {
        if (c.is_constant()) return;
        if (c.expansion().dim() != dim)
            throw std::invalid_argument(fmt::format("coefficient field: {} entry has wrong dimension", what));
        if (!std::isfinite(norm_p(c.expansion(), p)))
            throw std::invalid_argument(fmt::format("coefficient field: {} entry has no finite p-norm", what));
    };
    for (const auto& c : sigma) check(c, "sigma");
    for (const auto& c : drift) check(c, "drift");
}

HermiteExpansion constant_surrogate(double value, double window, const BasisTruncation& truncation) {
    if (!(window > 0.0)) throw std::invalid_argument("constant_surrogate: window must be positive");
    // each axis gets order N/d, so the tensor product fits inside |n| <= N
    const int N = truncation.max_order() / truncation.dim();
    const int points = 8 * N + 9;
    Eigen::MatrixXd H(points, N + 1);
    Eigen::VectorXd h;
    for (int k = 0; k < points; ++k) {
        const double x = -window + 2.0 * window * k / (points - 1);
        hermite_functions(N, x, h);
        H.row(k) = h.transpose();
    }
    Eigen::BDCSVD<Eigen::MatrixXd> svd(H, Eigen::ComputeThinU | Eigen::ComputeThinV);
    svd.setThreshold(1e-13);
    const Eigen::VectorXd one = svd.solve(Eigen::VectorXd::Ones(points));

    Eigen::VectorXd c(static_cast<Eigen::Index>(truncation.size()));
    for (std::size_t k = 0; k < truncation.size(); ++k) {
        const auto& n = truncation.index(k);
        double v = value;
        for (int i = 0; i < truncation.dim(); ++i) v *= n[i] <= N ? one(n[i]) : 0.0;
        c(static_cast<Eigen::Index>(k)) = v;
    }
    return {truncation, std::move(c), 0.0};
}

namespace {

template <typename Y>
Eigen::MatrixXd sigma_eval_impl(const CoefficientField& field, const Y& y, int ydim) {
    if (ydim != field.dim)
        throw std::invalid_argument(
            fmt::format("sigma_eval: distribution of dimension {} vs field of dimension {}", ydim, field.dim));
    Eigen::MatrixXd S(field.dim, field.dim);
    for (int i = 0; i < field.dim; ++i)
        for (int j = 0; j < field.dim; ++j) S(i, j) = field.sigma_at(i, j).evaluate(y);
    return S;
}

template <typename Y>
Eigen::VectorXd b_eval_impl(const CoefficientField& field, const Y& y, int ydim) {
    if (ydim != field.dim)
        throw std::invalid_argument(
            fmt::format("b_eval: distribution of dimension {} vs field of dimension {}", ydim, field.dim));
    Eigen::VectorXd b(field.dim);
    for (int i = 0; i < field.dim; ++i) b(i) = field.drift_at(i).evaluate(y);
    return b;
}

}  // namespace

Eigen::MatrixXd sigma_eval(const CoefficientField& field, const HermiteExpansion& y) {
    return sigma_eval_impl(field, y, y.dim());
}

Eigen::MatrixXd sigma_eval(const CoefficientField& field, const Profile& y) {
    return sigma_eval_impl(field, y, profile_dim(y));
}

Eigen::VectorXd b_eval(const CoefficientField& field, const HermiteExpansion& y) {
    return b_eval_impl(field, y, y.dim());
}

Eigen::VectorXd b_eval(const CoefficientField& field, const Profile& y) {
    return b_eval_impl(field, y, profile_dim(y));
}

HermiteExpansion apply_L(const CoefficientField& field, const HermiteExpansion& y) {
    const Eigen::MatrixXd S = sigma_eval(field, y);
    const Eigen::VectorXd b = b_eval(field, y);
    const Eigen::MatrixXd a = S * S.transpose();
    const int d = field.dim;
    auto out = HermiteExpansion::zero(y.truncation(), y.regularity() - 1.0);
    std::vector<std::optional<HermiteExpansion>> first(static_cast<std::size_t>(d));
    auto grad = [&](int i) -> const HermiteExpansion& {
        auto& slot = first[static_cast<std::size_t>(i)];
        if (!slot) slot = derivative(y, i);
        return *slot;
    };
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            if (a(i, j) != 0.0) out += (0.5 * a(i, j)) * derivative(grad(j), i);
    for (int i = 0; i < d; ++i)
        if (b(i) != 0.0) out -= b(i) * grad(i);
    return out.with_regularity(y.regularity() - 1.0);
}

HermiteExpansion apply_A(const CoefficientField& field, const HermiteExpansion& y, int j) {
    if (j < 0 || j >= field.dim)
        throw std::out_of_range(fmt::format("apply_A: noise index {} outside [0, {})", j, field.dim));
    const Eigen::MatrixXd S = sigma_eval(field, y);
    auto out = HermiteExpansion::zero(y.truncation(), y.regularity() - 1.0);
    for (int i = 0; i < field.dim; ++i)
        if (S(i, j) != 0.0) out -= S(i, j) * derivative(y, i);
    return out.with_regularity(y.regularity() - 1.0);
}

HermiteExpansion apply_L_hat(const CoefficientField& field, const HermiteExpansion& y, const Eigen::VectorXd& h) {
    if (h.size() != field.dim)
        throw std::invalid_argument(fmt::format("apply_L_hat: h has {} components, field has {}", h.size(), field.dim));
    auto sum = HermiteExpansion::zero(y.truncation(), y.regularity() - 1.0);
    for (int j = 0; j < field.dim; ++j)
        if (h(j) != 0.0) sum += h(j) * apply_A(field, y, j);
    return (-sum).with_regularity(y.regularity() - 1.0);
}

SdeCoefficients pullback_coeffs(const CoefficientField& field) {
    field.validate();
    auto shared = std::make_shared<const CoefficientField>(field);
    SdeCoefficients out;
    out.dim = field.dim;
    out.sigma = [shared](const Eigen::VectorXd& rho) {
        return sigma_eval(*shared, translate(shared->base, rho));
    };
    out.drift = [shared](const Eigen::VectorXd& rho) { return b_eval(*shared, translate(shared->base, rho)); };
    return out;
}

SdeCoefficients constant_coeffs(const Eigen::MatrixXd& sigma, const Eigen::VectorXd& drift) {
    if (sigma.rows() != drift.size() || sigma.cols() != drift.size())
        throw std::invalid_argument("constant_coeffs: sigma must be d x d");
    SdeCoefficients out;
    out.dim = static_cast<int>(drift.size());
    out.sigma = [sigma](const Eigen::VectorXd&) { return sigma; };
    out.drift = [drift](const Eigen::VectorXd&) { return drift; };
    return out;
}

std::vector<BallBound> ball_bound_check(const CoefficientField& field, std::span<const double> radii, int samples,
                                        std::uint64_t seed, int max_order) {
    field.validate();
    if (samples < 1) throw std::invalid_argument("ball_bound_check: samples must be >= 1");
    for (std::size_t r = 0; r < radii.size(); ++r) {
        if (!(radii[r] > 0.0)) throw std::invalid_argument("ball_bound_check: radii must be positive");
        if (r > 0 && radii[r] < radii[r - 1])
            throw std::invalid_argument("ball_bound_check: radii must be non-decreasing");
    }
    const BasisTruncation trunc(field.dim, max_order);
    const auto size = static_cast<Eigen::Index>(trunc.size());
    Eigen::VectorXd scale(size);
    for (std::size_t k = 0; k < trunc.size(); ++k)
        scale(static_cast<Eigen::Index>(k)) = std::pow(2.0 * trunc.order(k) + field.dim, field.p);

    std::vector<BallBound> out;
    double c1 = 0.0, c2 = 0.0;
    std::size_t used = 0;
    for (std::size_t r = 0; r < radii.size(); ++r) {
        for (int s = 0; s < samples; ++s) {
            auto engine = keyed_engine(seed, StreamKind::BallSampling, r * static_cast<std::uint64_t>(samples) + s);
            std::normal_distribution<double> normal;
            std::uniform_real_distribution<double> uniform;
            Eigen::VectorXd z(size);
            for (Eigen::Index k = 0; k < size; ++k) z(k) = normal(engine);
            const double zn = z.norm();
            const double fraction = 1.0 - uniform(engine);  // (0, 1]
            if (zn == 0.0) continue;
            const HermiteExpansion y(trunc, (radii[r] * fraction / zn) * z.cwiseProduct(scale), -field.p);
            const double ny = norm_p(y, -field.p);
            if (ny == 0.0) continue;
            c1 = std::max(c1, norm_p(apply_L(field, y), -field.p - 1.0) / ny);
            for (int j = 0; j < field.dim; ++j)
                c2 = std::max(c2, norm_p(apply_A(field, y, j), -field.p - 1.0) / ny);
            ++used;
        }
        out.push_back({radii[r], c1, c2, used});
    }
    return out;
}

double local_lipschitz_estimate(const SdeCoefficients& coeffs, double radius, int grid) {
    if (grid < 2) throw std::invalid_argument("local_lipschitz_estimate: grid needs at least two points");
    const double step = 2.0 * radius / (grid - 1);
    double best = 0.0;
    for (int axis = 0; axis < coeffs.dim; ++axis) {
        Eigen::VectorXd x = Eigen::VectorXd::Zero(coeffs.dim);
        x(axis) = -radius;
        Eigen::MatrixXd s_prev = coeffs.sigma(x);
        Eigen::VectorXd b_prev = coeffs.drift(x);
        for (int k = 1; k < grid; ++k) {
            x(axis) = -radius + k * step;
            Eigen::MatrixXd s = coeffs.sigma(x);
            Eigen::VectorXd b = coeffs.drift(x);
            best = std::max(best, std::max((s - s_prev).norm(), (b - b_prev).norm()) / step);
            s_prev = std::move(s);
            b_prev = std::move(b);
        }
    }
    return best;
}

Coefficient parse_coefficient(const std::string& spec, const BasisTruncation& truncation) {
    std::istringstream in(spec);
    std::string kind;
    in >> kind;
    auto finish = [&] {
        std::string extra;
        if (in >> extra) throw std::invalid_argument("trailing tokens in coefficient '" + spec + "'");
    };
    if (kind == "constant") {
        double c = 0;
        if (!(in >> c)) throw std::invalid_argument("expected 'constant <value>'");
        finish();
        return Coefficient::constant(c);
    }
    if (kind == "surrogate") {
        double value = 0, window = 0;
        if (!(in >> value >> window)) throw std::invalid_argument("expected 'surrogate <value> <window>'");
        finish();
        return Coefficient::functional(constant_surrogate(value, window, truncation));
    }
    if (kind == "hermite" || kind == "gaussian")
        return Coefficient::functional(parse_test_function(spec, truncation.dim()).expansion(truncation));
    throw std::invalid_argument("unknown coefficient kind '" + kind + "'");
}

}  // namespace hslab
