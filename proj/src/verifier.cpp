#include "hslab/verifier.hpp"

#include <fmt/format.h>
#include <fmt/ostream.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "hslab/hermite.hpp"
#include "hslab/parallel.hpp"
#include "hslab/quadrature.hpp"
#include "hslab/rng.hpp"

namespace hslab {

LiftedProcess::LiftedProcess(const PathEnsemble& z, Profile phi) : z_(&z), phi_(std::move(phi)) {
    if (profile_dim(phi_) != z.dim)
        throw std::invalid_argument(
            fmt::format("lift: profile of dimension {} for an ensemble of dimension {}", profile_dim(phi_), z.dim));
    if (z.states.rows() != (z.grid.steps + 1) * z.dim || z.states.cols() != z.increments.cols())
        throw std::invalid_argument("lift: ensemble has no trajectories");
}

Profile LiftedProcess::at(std::size_t path, int step) const { return translate(phi_, z_->state_at(path, step)); }

HermiteExpansion LiftedProcess::expansion(std::size_t path, int step, const BasisTruncation& truncation) const {
    if (const auto* delta = std::get_if<DeltaFamily>(&phi_))
        return delta_expansion(delta->location + z_->state_at(path, step), truncation);
    return translate(std::get<HermiteExpansion>(phi_), z_->state_at(path, step)).resized(truncation.max_order());
}

double LiftedProcess::pair_with(std::size_t path, int step, const HermiteExpansion& psi) const {
    return pair(expansion(path, step, psi.truncation()), psi);
}

Eigen::MatrixXd lifted_norms_squared(const LiftedProcess& x, double q, int max_order, unsigned threads) {
    const int K = x.grid().steps;
    const auto& z = x.ensemble();
    Eigen::MatrixXd out(K + 1, static_cast<Eigen::Index>(x.paths()));
    const auto* delta = std::get_if<DeltaFamily>(&x.profile());
    const BasisTruncation trunc(z.dim, max_order);
    parallel_for(x.paths(), threads, [&](std::size_t m) {
        const auto col = static_cast<Eigen::Index>(m);
        if (z.flagged[m]) {
            out.col(col).setConstant(std::numeric_limits<double>::quiet_NaN());
            return;
        }
        for (int k = 0; k <= K; ++k) {
            if (delta && z.dim == 1) {
                out(k, col) = delta_norm_squared(delta->location(0) + z.state(m, k, 0), q, max_order);
            } else {
                const double n = norm_p(x.expansion(m, k, trunc), q);
                out(k, col) = n * n;
            }
        }
    });
    return out;
}

double brownian_delta_mean_square(double t, double q, int max_order) {
    if (t < 0.0) throw std::invalid_argument("brownian_delta_mean_square: t must be >= 0");
    if (t == 0.0) return delta_norm_squared(0.0, q, max_order);
    // y = c s turns h_n(y)^2 times the N(0, t) density into a polynomial times e^{-s^2}
    const double c = std::sqrt(2.0 * t / (2.0 * t + 1.0));
    const auto& rule = cached_gauss_hermite(std::min(kMaxQuadratureNodes, max_order + 20));
    Eigen::VectorXd weight(max_order + 1);
    for (int n = 0; n <= max_order; ++n) weight(n) = std::pow(2.0 * n + 1.0, 2.0 * q);
    Eigen::VectorXd h;
    CompensatedSum total;
    for (int k = 0; k < rule.size(); ++k) {
        const double y = c * rule.nodes(k);
        hermite_functions(max_order, y, h);
        const double density = std::exp(-y * y / (2.0 * t)) / std::sqrt(2.0 * std::numbers::pi * t);
        total.add(rule.scaled_weights(k) * c * density * weight.dot(h.cwiseAbs2()));
    }
    return total.value();
}

ResidualReport spde_residual(const LiftedProcess& x, const Eigen::MatrixXd& increments, const StateOperator& drift,
                             const std::vector<StateOperator>& diffusion, const std::vector<TestFunction>& panel,
                             int max_order, unsigned threads) {
    const auto& z = x.ensemble();
    const int d = z.dim;
    const int K = z.grid.steps;
    if (increments.rows() != K * d || increments.cols() != static_cast<Eigen::Index>(z.paths()))
        throw std::invalid_argument(fmt::format("spde_residual: increments are {}x{}, grid needs {}x{}",
                                                increments.rows(), increments.cols(), K * d, z.paths()));
    if (diffusion.size() != static_cast<std::size_t>(d))
        throw std::invalid_argument(
            fmt::format("spde_residual: {} diffusion operators for dimension {}", diffusion.size(), d));
    if (panel.empty()) throw std::invalid_argument("spde_residual: empty test-function panel");

    const BasisTruncation trunc(d, max_order);
    const auto P = static_cast<Eigen::Index>(panel.size());
    Eigen::MatrixXd psi(static_cast<Eigen::Index>(trunc.size()), P);
    ResidualReport r;
    r.grid = z.grid;
    for (Eigen::Index i = 0; i < P; ++i) {
        psi.col(i) = panel[static_cast<std::size_t>(i)].expansion(trunc).coeffs();
        r.functions.push_back(panel[static_cast<std::size_t>(i)].label());
    }
    const auto M = static_cast<Eigen::Index>(z.paths());
    r.terminal = Eigen::MatrixXd::Zero(M, P);
    r.sup = Eigen::MatrixXd::Zero(M, P);
    r.excluded = z.flagged;
    const double dt = z.grid.dt();

    parallel_for(z.paths(), threads, [&](std::size_t m) {
        const auto row = static_cast<Eigen::Index>(m);
        if (z.flagged[m]) return;
        StepContext ctx{m, 0, 0.0, &z};
        HermiteExpansion xk = x.expansion(m, 0, trunc);
        const Eigen::RowVectorXd start = xk.coeffs().transpose() * psi;
        Eigen::RowVectorXd integral = Eigen::RowVectorXd::Zero(P);
        Eigen::RowVectorXd worst = Eigen::RowVectorXd::Zero(P);
        Eigen::RowVectorXd residual = Eigen::RowVectorXd::Zero(P);
        for (int k = 0; k < K; ++k) {
            ctx.step = k;
            ctx.time = z.grid.time(k);
            integral += (drift(xk, ctx).coeffs().transpose() * psi) * dt;
            for (int j = 0; j < d; ++j)
                integral += (diffusion[static_cast<std::size_t>(j)](xk, ctx).coeffs().transpose() * psi) *
                            increments(k * d + j, row);
            xk = x.expansion(m, k + 1, trunc);
            residual = (xk.coeffs().transpose() * psi) - start - integral;
            worst = worst.cwiseMax(residual.cwiseAbs());
        }
        r.terminal.row(row) = residual;
        r.sup.row(row) = worst;
    });

    r.path_mean_abs.assign(z.paths(), 0.0);
    std::vector<double> sups(z.paths(), 0.0), col(z.paths());
    for (std::size_t m = 0; m < z.paths(); ++m) {
        const auto row = static_cast<Eigen::Index>(m);
        r.path_mean_abs[m] = r.terminal.row(row).cwiseAbs().mean();
        sups[m] = r.sup.row(row).mean();
    }
    r.mean_abs = mean_estimate(r.path_mean_abs, r.excluded);
    r.sup_mean = mean_estimate(sups, r.excluded);
    for (Eigen::Index i = 0; i < P; ++i) {
        for (std::size_t m = 0; m < z.paths(); ++m) col[m] = std::abs(r.terminal(static_cast<Eigen::Index>(m), i));
        r.mean_abs_per_function.push_back(mean_estimate(col, r.excluded));
        for (std::size_t m = 0; m < z.paths(); ++m) col[m] = r.terminal(static_cast<Eigen::Index>(m), i);
        r.signed_mean_per_function.push_back(mean_estimate(col, r.excluded));
    }
    return r;
}

ResidualReport ito_translation_check(const PathEnsemble& z_tilde, const CoefficientField& field, const DriftTable& h,
                                     const std::vector<TestFunction>& panel, int max_order, unsigned threads) {
    const int d = z_tilde.dim;
    if (field.dim != d || h.dim() != d || !(h.grid() == z_tilde.grid))
        throw std::invalid_argument("ito_translation_check: field, drift table and ensemble disagree in shape");
    if (z_tilde.states.rows() != (z_tilde.grid.steps + 1) * d)
        throw std::invalid_argument("ito_translation_check: ensemble has no trajectories");

    // the trajectories must be the Euler scheme of (sigma_bar, b_bar - sigma_bar h)
    const auto coeffs = pullback_coeffs(field);
    const double dt = z_tilde.grid.dt();
    std::size_t checked = 0;
    for (std::size_t m = 0; m < z_tilde.paths() && checked < 4; ++m) {
        if (z_tilde.flagged[m]) continue;
        ++checked;
        for (int k = 0; k < z_tilde.grid.steps; ++k) {
            const Eigen::VectorXd zk = z_tilde.state_at(m, k);
            const Eigen::MatrixXd s = coeffs.sigma(zk);
            const Eigen::VectorXd next = zk + s * z_tilde.increment_at(m, k) + (coeffs.drift(zk) - s * h.at(k)) * dt;
            const Eigen::VectorXd actual = z_tilde.state_at(m, k + 1);
            if ((next - actual).cwiseAbs().maxCoeff() > 1e-9 * (1.0 + actual.cwiseAbs().maxCoeff()))
                throw std::invalid_argument(fmt::format(
                    "ito_translation_check: path {} step {} does not follow the modified SDE of the given field and h",
                    m, k));
        }
    }

    const LiftedProcess x(z_tilde, field.base);
    const StateOperator drift = [&field, &h](const HermiteExpansion& y, const StepContext& ctx) {
        auto out = apply_L(field, y);
        out += apply_L_hat(field, y, h.at(ctx.step));
        return out;
    };
    std::vector<StateOperator> diffusion;
    for (int j = 0; j < d; ++j)
        diffusion.emplace_back([&field, j](const HermiteExpansion& y, const StepContext&) { return apply_A(field, y, j); });
    return spde_residual(x, z_tilde.increments, drift, diffusion, panel, max_order, threads);
}

bool ConvergenceReport::within(double lo, double hi) const {
    if (!(fit.slope >= lo && fit.slope <= hi)) return false;
    return std::all_of(halving_orders.begin(), halving_orders.end(), [&](double o) { return o >= lo && o <= hi; });
}

ConvergenceReport residual_convergence(std::span<const ResidualReport> levels) {
    if (levels.size() < 2) throw std::invalid_argument("residual_convergence: need at least two step sizes");
    ConvergenceReport c;
    std::vector<double> x, y, s;
    for (const auto& l : levels) {
        c.dts.push_back(l.dt());
        c.means.push_back(l.mean_abs.mean);
        c.std_errors.push_back(l.mean_abs.std_error);
        x.push_back(std::log2(l.dt()));
        y.push_back(std::log2(l.mean_abs.mean));
        // log2 of the mean has standard error stderr / (mean ln 2)
        s.push_back(l.mean_abs.mean > 0.0 ? l.mean_abs.std_error / (l.mean_abs.mean * std::numbers::ln2) : 1.0);
    }
    for (std::size_t i = 0; i + 1 < levels.size(); ++i)
        c.halving_orders.push_back(std::log2(c.means[i] / c.means[i + 1]) / std::log2(c.dts[i] / c.dts[i + 1]));
    const bool all_positive = std::all_of(s.begin(), s.end(), [](double v) { return v > 0.0; });
    c.fit = all_positive ? fit_slope(x, y, s) : fit_slope(x, y);
    c.ci_low = c.fit.slope - 1.96 * c.fit.std_error;
    c.ci_high = c.fit.slope + 1.96 * c.fit.std_error;
    return c;
}

bool PairedComparison::agree(double sigmas) const {
    const double m = std::abs(difference.mean);
    return m <= sigmas * difference.std_error || m <= 1e-12 * scale;
}

PairedComparison paired_comparison(const ResidualReport& a, const ResidualReport& b) {
    if (a.path_mean_abs.size() != b.path_mean_abs.size())
        throw std::invalid_argument("paired_comparison: reports cover different path sets");
    std::vector<double> diff(a.path_mean_abs.size());
    std::vector<unsigned char> excluded(diff.size(), 0);
    for (std::size_t m = 0; m < diff.size(); ++m) {
        excluded[m] = (a.excluded.size() > m && a.excluded[m]) || (b.excluded.size() > m && b.excluded[m]);
        diff[m] = excluded[m] ? 0.0 : a.path_mean_abs[m] - b.path_mean_abs[m];
    }
    return {mean_estimate(diff, excluded), a.mean_abs.mean};
}

Assumption4Report assumption4_check(const Eigen::MatrixXd& norms_squared, std::span<const unsigned char> flagged) {
    const auto M = static_cast<std::size_t>(norms_squared.cols());
    if (!flagged.empty() && flagged.size() != M) throw std::invalid_argument("assumption4_check: mask length mismatch");
    std::vector<double> sups(M, 0.0), row(M);
    for (std::size_t m = 0; m < M; ++m)
        if (flagged.empty() || !flagged[m]) sups[m] = norms_squared.col(static_cast<Eigen::Index>(m)).maxCoeff();
    Assumption4Report r;
    r.lambda = mean_estimate(sups, flagged);
    if (r.lambda.count == 0) throw std::runtime_error("assumption4_check: every path is flagged");
    for (Eigen::Index k = 0; k < norms_squared.rows(); ++k) {
        for (std::size_t m = 0; m < M; ++m) row[m] = norms_squared(k, static_cast<Eigen::Index>(m));
        const auto e = mean_estimate(row, flagged);
        if (k == 0 || e.mean > r.h2.mean) {
            r.h2 = e;
            r.h2_step = static_cast<int>(k);
        }
    }
    r.ordered = r.h2.mean <= r.lambda.mean * (1.0 + 1e-14);
    return r;
}

namespace {

struct PooledPoint {
    double value;
    bool from_p;
    std::size_t index;
};

}  // namespace

LawTestReport law_equality_test(std::span<const double> samples_p, std::span<const double> samples_q,
                                std::span<const double> weights_q, double level, int replicates, std::uint64_t seed,
                                unsigned threads) {
    if (samples_p.empty() || samples_q.empty()) throw std::invalid_argument("law_equality_test: empty sample");
    if (weights_q.size() != samples_q.size())
        throw std::invalid_argument("law_equality_test: weights and samples differ in length");
    if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("law_equality_test: level must lie in (0, 1)");
    if (replicates < 1) throw std::invalid_argument("law_equality_test: need at least one replicate");
    for (double w : weights_q)
        if (!(w > 0.0) || !std::isfinite(w)) throw std::invalid_argument("law_equality_test: weights must be positive");
    const std::size_t np = samples_p.size(), nq = samples_q.size();

    std::vector<PooledPoint> pooled;
    pooled.reserve(np + nq);
    for (std::size_t i = 0; i < np; ++i) pooled.push_back({samples_p[i], true, i});
    for (std::size_t i = 0; i < nq; ++i) pooled.push_back({samples_q[i], false, i});
    for (const auto& p : pooled)
        if (!std::isfinite(p.value)) throw std::invalid_argument("law_equality_test: non-finite sample");
    std::stable_sort(pooled.begin(), pooled.end(), [](const auto& a, const auto& b) { return a.value < b.value; });
    if (pooled.front().value == pooled.back().value)
        throw std::invalid_argument("law_equality_test: degenerate (constant) samples");
    // last pooled position of each run of equal values
    std::vector<std::size_t> group_end;
    for (std::size_t i = 0; i < pooled.size(); ++i)
        if (i + 1 == pooled.size() || pooled[i + 1].value != pooled[i].value) group_end.push_back(i);

    auto cdf_gap = [&](std::span<const double> count_p, std::span<const double> mass_q, std::vector<double>& gap) {
        double total_p = 0.0, total_q = 0.0;
        for (double c : count_p) total_p += c;
        for (double c : mass_q) total_q += c;
        double fp = 0.0, fq = 0.0;
        std::size_t g = 0;
        gap.resize(group_end.size());
        for (std::size_t i = 0; i < pooled.size(); ++i) {
            if (pooled[i].from_p)
                fp += count_p[pooled[i].index];
            else
                fq += mass_q[pooled[i].index];
            if (i == group_end[g]) gap[g++] = fp / total_p - fq / total_q;
        }
    };

    const std::vector<double> ones(np, 1.0);
    const std::vector<double> wq(weights_q.begin(), weights_q.end());
    std::vector<double> base_gap;
    cdf_gap(ones, wq, base_gap);
    LawTestReport r;
    r.level = level;
    r.replicates = replicates;
    for (double g : base_gap) r.statistic = std::max(r.statistic, std::abs(g));
    r.effective_size_p = static_cast<double>(np);
    {
        double s = 0.0, s2 = 0.0;
        for (double w : wq) {
            s += w;
            s2 += w * w;
        }
        r.effective_size_q = s * s / s2;
    }

    std::vector<double> boot(static_cast<std::size_t>(replicates));
    parallel_for(boot.size(), threads, [&](std::size_t b) {
        auto engine = keyed_engine(seed, StreamKind::Bootstrap, b);
        std::uniform_int_distribution<std::size_t> pick_p(0, np - 1), pick_q(0, nq - 1);
        std::vector<double> count_p(np, 0.0), mass_q(nq, 0.0), gap;
        for (std::size_t i = 0; i < np; ++i) count_p[pick_p(engine)] += 1.0;
        for (std::size_t i = 0; i < nq; ++i) {
            const std::size_t j = pick_q(engine);
            mass_q[j] += wq[j];
        }
        cdf_gap(count_p, mass_q, gap);
        double d = 0.0;
        for (std::size_t g = 0; g < gap.size(); ++g) d = std::max(d, std::abs(gap[g] - base_gap[g]));
        boot[b] = d;
    });
    std::sort(boot.begin(), boot.end());
    const auto rank = static_cast<std::size_t>(std::ceil((1.0 - level) * replicates));
    r.critical = boot[std::min(boot.size(), std::max<std::size_t>(rank, 1)) - 1];
    r.pass = r.statistic <= r.critical;
    return r;
}

void write_residual_table(std::ostream& out, std::span<const ResidualReport> levels) {
    out << "dt,mean_abs_residual,stderr,n_paths\n";
    for (const auto& l : levels)
        fmt::print(out, "{},{},{},{}\n", l.dt(), l.mean_abs.mean, l.mean_abs.std_error, l.mean_abs.count);
}

}  // namespace hslab
