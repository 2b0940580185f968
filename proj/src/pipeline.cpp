#include "hslab/pipeline.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "hslab/parallel.hpp"

#ifndef HSLAB_VERSION
#define HSLAB_VERSION "0.0.0"
#endif

namespace hslab {

namespace {

namespace pt = boost::property_tree;

std::vector<std::string> split_words(const std::string& s) {
    std::istringstream in(s);
    std::vector<std::string> out;
    for (std::string w; in >> w;) out.push_back(w);
    return out;
}

template <typename T>
T parse_number(const std::string& text, const std::string& key) {
    T value{};
    const char* first = text.data();
    const char* last = first + text.size();
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last || text.empty())
        throw ConfigError(fmt::format("{}: cannot read '{}' as a number", key, text));
    if constexpr (std::is_floating_point_v<T>) {
        if (!std::isfinite(value)) throw ConfigError(fmt::format("{}: value must be finite", key));
    }
    return value;
}

bool parse_bool_choice(const std::string& text, const std::string& key, const char* yes, const char* no) {
    if (text == yes) return true;
    if (text == no) return false;
    throw ConfigError(fmt::format("{}: expected '{}' or '{}', got '{}'", key, yes, no, text));
}

// "sigma_ij" -> (i, j) with 1-based digits; "drift_i" -> i
std::vector<int> key_indices(const std::string& key, const std::string& prefix) {
    if (key.rfind(prefix, 0) != 0 || key.size() == prefix.size()) return {};
    std::vector<int> out;
    for (std::size_t i = prefix.size(); i < key.size(); ++i) {
        if (key[i] < '1' || key[i] > '9') return {};
        out.push_back(key[i] - '0');
    }
    return out;
}

std::string process_name(ProcessKind k) { return k == ProcessKind::Sde ? "sde" : "squared_brownian"; }

void set_scenario_key(ScenarioConfig& c, const std::string& key, const std::string& value) {
    const std::string where = "scenario." + key;
    if (key == "name") {
        if (value.empty()) throw ConfigError(where + ": must not be empty");
        c.name = value;
    } else if (key == "process") {
        if (value == "sde")
            c.process = ProcessKind::Sde;
        else if (value == "squared_brownian")
            c.process = ProcessKind::SquaredBrownian;
        else
            throw ConfigError(fmt::format("{}: expected 'sde' or 'squared_brownian', got '{}'", where, value));
    } else if (key == "dimension") {
        c.dim = parse_number<int>(value, where);
    } else if (key == "p") {
        c.p = parse_number<double>(value, where);
    } else if (key == "truncation") {
        c.truncation = parse_number<int>(value, where);
    } else if (key == "norm_truncation") {
        c.norm_truncation = parse_number<int>(value, where);
    } else if (key == "horizon") {
        c.horizon = parse_number<double>(value, where);
    } else if (key == "steps") {
        c.steps = parse_number<int>(value, where);
    } else if (key == "paths") {
        c.paths = parse_number<std::size_t>(value, where);
    } else if (key == "seed") {
        c.seed = parse_number<std::uint64_t>(value, where);
    } else if (key == "residual_paths") {
        c.residual_paths = parse_number<std::size_t>(value, where);
    } else if (key == "residual_levels") {
        c.residual_levels = parse_number<int>(value, where);
    } else if (key == "threads") {
        c.threads = parse_number<unsigned>(value, where);
    } else if (key == "output") {
        c.output_dir = value;
    } else {
        throw ConfigError(fmt::format("unknown key '{}'", where));
    }
}

void set_field_key(ScenarioConfig& c, const std::string& key, const std::string& value) {
    if (key == "base")
        c.base = value;
    else if (key_indices(key, "sigma_").size() == 2)
        c.sigma[key] = value;
    else if (key_indices(key, "drift_").size() == 1)
        c.drift[key] = value;
    else
        throw ConfigError(fmt::format("unknown key 'field.{}'", key));
}

void set_checks_key(ScenarioConfig& c, const std::string& key, const std::string& value) {
    const std::string where = "checks." + key;
    if (key == "law_test")
        c.weighted_law_test = parse_bool_choice(value, where, "weighted", "unweighted");
    else if (key == "replicates")
        c.replicates = parse_number<int>(value, where);
    else if (key == "level")
        c.level = parse_number<double>(value, where);
    else
        throw ConfigError(fmt::format("unknown key '{}'", where));
}

bool is_brownian_delta(const ScenarioConfig& c, const CoefficientField& f) {
    if (c.process != ProcessKind::Sde || c.dim != 1) return false;
    const auto* delta = std::get_if<DeltaFamily>(&f.base);
    if (!delta || delta->location(0) != 0.0) return false;
    return f.sigma_at(0, 0).is_constant() && f.sigma_at(0, 0).constant_value() == 1.0 && f.drift_at(0).is_constant() &&
           f.drift_at(0).constant_value() == 0.0;
}

PathEnsemble leading_paths(const PathEnsemble& e, std::size_t n) {
    PathEnsemble out;
    out.grid = e.grid;
    out.dim = e.dim;
    out.increments = e.increments.leftCols(static_cast<Eigen::Index>(n));
    out.flagged.assign(n, 0);
    return out;
}

// Example 2 trajectories with the exact B^2 in place of the Euler states.
PathEnsemble squared_exact(const PathEnsemble& increments) {
    auto z = simulate_example2(increments);
    z.states = z.aux.at("Z_exact");
    return z;
}

double brownian_at(const StepContext& c) {
    return c.ensemble->aux.at("B")(c.step, static_cast<Eigen::Index>(c.path));
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
    out << text;
    if (!out) throw std::runtime_error(fmt::format("write failed for {}", path.string()));
}

std::string csv_quote(const std::string& s) {
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch;
    }
    return out + "\"";
}

const char* pass_word(bool b) { return b ? "PASS" : "FAIL"; }

}  // namespace

std::string version_string() { return HSLAB_VERSION; }

ScenarioConfig parse_config(std::istream& in, const std::string& source) {
    pt::ptree tree;
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(fmt::format("{}:{}: {}", source, e.line(), e.message()));
    }
    ScenarioConfig c;
    std::map<int, std::string> panel;
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty())
            throw ConfigError(fmt::format("{}: key '{}' appears outside any section", source, section));
        for (const auto& [key, node] : body) {
            const std::string& value = node.data();
            try {
                if (section == "scenario") {
                    set_scenario_key(c, key, value);
                } else if (section == "field") {
                    set_field_key(c, key, value);
                } else if (section == "panel") {
                    if (key.rfind("psi", 0) != 0) throw ConfigError(fmt::format("unknown key 'panel.{}'", key));
                    const int i = parse_number<int>(key.substr(3), "panel." + key);
                    if (i < 1) throw ConfigError(fmt::format("unknown key 'panel.{}'", key));
                    panel[i] = value;
                } else if (section == "checks") {
                    set_checks_key(c, key, value);
                } else {
                    throw ConfigError(fmt::format("unknown section '[{}]'", section));
                }
            } catch (const ConfigError& e) {
                throw ConfigError(fmt::format("{}: {}", source, e.what()));
            }
        }
    }
    int expected = 1;
    for (const auto& [i, spec] : panel) {
        if (i != expected) throw ConfigError(fmt::format("{}: panel.psi{} is missing", source, expected));
        c.panel.push_back(spec);
        ++expected;
    }
    try {
        validate(c);
    } catch (const ConfigError& e) {
        throw ConfigError(fmt::format("{}: {}", source, e.what()));
    }
    return c;
}

ScenarioConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(fmt::format("cannot open config file {}", path.string()));
    return parse_config(in, path.string());
}

ScenarioConfig preset(std::string_view name) {
    ScenarioConfig c;
    if (name == "example1" || name == "negative") {
        c.name = std::string(name);
        c.sigma["sigma_11"] = "constant 1";
        c.drift["drift_1"] = "constant 0";
        c.weighted_law_test = name == "example1";
    } else if (name == "example2") {
        c.name = "example2";
        c.process = ProcessKind::SquaredBrownian;
    } else {
        throw ConfigError(fmt::format("unknown preset '{}'", name));
    }
    return c;
}

std::vector<std::string> preset_names() { return {"example1", "example2", "negative"}; }

Profile parse_profile(const std::string& spec, int dim, int truncation) {
    const auto words = split_words(spec);
    if (words.empty()) throw ConfigError("field.base: empty profile");
    if (words[0] == "delta") {
        const std::size_t n = words.size() - 1;
        if (n != 1 && n != static_cast<std::size_t>(dim))
            throw ConfigError(fmt::format("field.base: delta needs 1 or {} coordinates, got {}", dim, n));
        Eigen::VectorXd x(dim);
        for (int i = 0; i < dim; ++i) x(i) = parse_number<double>(words[n == 1 ? 1 : 1 + i], "field.base");
        return DeltaFamily{x};
    }
    try {
        return parse_test_function(spec, dim).expansion(BasisTruncation(dim, truncation));
    } catch (const std::exception& e) {
        throw ConfigError(fmt::format("field.base: {}", e.what()));
    }
}

void validate(const ScenarioConfig& c) {
    if (c.name.empty()) throw ConfigError("scenario.name: must not be empty");
    if (c.dim < 1 || c.dim > 4) throw ConfigError(fmt::format("scenario.dimension: {} is outside 1..4", c.dim));
    if (!std::isfinite(c.p)) throw ConfigError("scenario.p: must be finite");
    if (c.truncation < 1 || c.truncation > kMaxTruncation)
        throw ConfigError(fmt::format("scenario.truncation: {} is outside 1..{}", c.truncation, kMaxTruncation));
    if (c.norm_truncation < 1 || c.norm_truncation > kMaxTruncation)
        throw ConfigError(
            fmt::format("scenario.norm_truncation: {} is outside 1..{}", c.norm_truncation, kMaxTruncation));
    if (!(c.horizon > 0.0) || !std::isfinite(c.horizon)) throw ConfigError("scenario.horizon: must be positive");
    if (c.steps < 1 || c.steps > kMaxSteps)
        throw ConfigError(fmt::format("scenario.steps: {} is outside 1..{}", c.steps, kMaxSteps));
    if (c.paths < 2 || c.paths > kMaxPaths)
        throw ConfigError(fmt::format("scenario.paths: {} is outside 2..{}", c.paths, kMaxPaths));
    if (c.residual_paths < 2 || c.residual_paths > c.paths)
        throw ConfigError(fmt::format("scenario.residual_paths: {} is outside 2..paths", c.residual_paths));
    if (c.residual_levels < 2 || c.residual_levels > 8)
        throw ConfigError(fmt::format("scenario.residual_levels: {} is outside 2..8", c.residual_levels));
    if (c.steps % (1 << (c.residual_levels - 1)) != 0)
        throw ConfigError(fmt::format("scenario.steps: {} is not divisible by 2^(residual_levels - 1) = {}", c.steps,
                                      1 << (c.residual_levels - 1)));
    for (const auto& [key, spec] : c.sigma) {
        const auto ij = key_indices(key, "sigma_");
        if (ij.size() != 2 || ij[0] > c.dim || ij[1] > c.dim)
            throw ConfigError(fmt::format("field.{}: index outside the dimension {}", key, c.dim));
    }
    for (const auto& [key, spec] : c.drift) {
        const auto i = key_indices(key, "drift_");
        if (i.size() != 1 || i[0] > c.dim)
            throw ConfigError(fmt::format("field.{}: index outside the dimension {}", key, c.dim));
    }
    const Profile base = parse_profile(c.base, c.dim, c.truncation);
    if (std::holds_alternative<DeltaFamily>(base) && !(c.p > c.dim / 4.0))
        throw ConfigError(fmt::format("scenario.p: p = {} must exceed d/4 = {} for a delta base profile", c.p,
                                      c.dim / 4.0));
    if (c.process == ProcessKind::SquaredBrownian) {
        if (c.dim != 1) throw ConfigError("scenario.dimension: squared_brownian is one-dimensional");
        if (!c.sigma.empty() || !c.drift.empty())
            throw ConfigError("field: squared_brownian has fixed coefficients; remove sigma_* and drift_*");
        const auto* delta = std::get_if<DeltaFamily>(&base);
        if (!delta || delta->location(0) != 0.0) throw ConfigError("field.base: squared_brownian needs 'delta 0'");
    }
    build_field(c);
    build_panel(c);
    if (c.replicates < 1 || c.replicates > 100000)
        throw ConfigError(fmt::format("checks.replicates: {} is outside 1..100000", c.replicates));
    if (!(c.level > 0.0 && c.level < 1.0)) throw ConfigError("checks.level: must lie in (0, 1)");
}

CoefficientField build_field(const ScenarioConfig& c) {
    const int d = c.dim;
    const BasisTruncation trunc(d, c.truncation);
    auto coefficient = [&](const std::map<std::string, std::string>& specs, const std::string& key, double fallback) {
        const auto it = specs.find(key);
        if (it == specs.end()) return Coefficient::constant(fallback);
        try {
            return parse_coefficient(it->second, trunc);
        } catch (const std::exception& e) {
            throw ConfigError(fmt::format("field.{}: {}", key, e.what()));
        }
    };
    CoefficientField f;
    f.dim = d;
    f.p = c.p;
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            f.sigma.push_back(coefficient(c.sigma, fmt::format("sigma_{}{}", i + 1, j + 1), i == j ? 1.0 : 0.0));
    for (int i = 0; i < d; ++i) f.drift.push_back(coefficient(c.drift, fmt::format("drift_{}", i + 1), 0.0));
    f.base = parse_profile(c.base, d, c.truncation);
    try {
        f.validate();
    } catch (const std::exception& e) {
        throw ConfigError(fmt::format("field: {}", e.what()));
    }
    return f;
}

std::vector<TestFunction> build_panel(const ScenarioConfig& c) {
    if (c.panel.empty()) return default_panel(c.dim);
    std::vector<TestFunction> out;
    for (std::size_t i = 0; i < c.panel.size(); ++i) {
        try {
            out.push_back(parse_test_function(c.panel[i], c.dim));
        } catch (const std::exception& e) {
            throw ConfigError(fmt::format("panel.psi{}: {}", i + 1, e.what()));
        }
    }
    return out;
}

std::string to_ini(const ScenarioConfig& c) {
    std::ostringstream out;
    out << "[scenario]\n";
    fmt::print(out, "name = {}\nprocess = {}\ndimension = {}\np = {}\ntruncation = {}\nnorm_truncation = {}\n", c.name,
               process_name(c.process), c.dim, c.p, c.truncation, c.norm_truncation);
    fmt::print(out, "horizon = {}\nsteps = {}\npaths = {}\nseed = {}\nresidual_paths = {}\nresidual_levels = {}\n",
               c.horizon, c.steps, c.paths, c.seed, c.residual_paths, c.residual_levels);
    fmt::print(out, "threads = {}\n", c.threads);
    if (!c.output_dir.empty()) fmt::print(out, "output = {}\n", c.output_dir.string());
    out << "\n[field]\n";
    fmt::print(out, "base = {}\n", c.base);
    for (const auto& [k, v] : c.sigma) fmt::print(out, "{} = {}\n", k, v);
    for (const auto& [k, v] : c.drift) fmt::print(out, "{} = {}\n", k, v);
    out << "\n[panel]\n";
    for (std::size_t i = 0; i < c.panel.size(); ++i) fmt::print(out, "psi{} = {}\n", i + 1, c.panel[i]);
    out << "\n[checks]\n";
    fmt::print(out, "law_test = {}\nreplicates = {}\nlevel = {}\n", c.weighted_law_test ? "weighted" : "unweighted",
               c.replicates, c.level);
    return out.str();
}

bool PipelineReport::passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass || !c.gating; });
}

PipelineReport run_pipeline(const ScenarioConfig& config, std::ostream* log) {
    validate(config);
    PipelineReport r;
    r.config = config;
    const Tolerances& tol = r.tolerances;
    const unsigned threads = config.threads ? config.threads : default_threads();
    const int d = config.dim;
    const TimeGrid grid(config.horizon, config.steps);
    const int K = grid.steps;
    const bool squared = config.process == ProcessKind::SquaredBrownian;
    const CoefficientField field = build_field(config);
    const auto panel = build_panel(config);
    const SdeCoefficients coeffs = pullback_coeffs(field);
    const Eigen::VectorXd z0 = Eigen::VectorXd::Zero(d);
    const double q = -config.p - 1.0;
    auto say = [&](const std::string& s) {
        if (log) *log << s << std::endl;
    };
    auto add = [&](std::string id, std::string description, bool pass, bool gating, std::string detail) {
        r.checks.push_back({std::move(id), std::move(description), pass, gating, std::move(detail)});
    };

    // under P
    say(fmt::format("[{}] simulating {} paths x {} steps under P", config.name, config.paths, K));
    const auto bm_p = sample_brownian(grid, d, config.paths, config.seed, threads, StreamKind::Brownian);
    const PathEnsemble zp = squared ? simulate_example2(bm_p) : simulate_base(coeffs, z0, bm_p, threads);
    r.flagged_p = zp.flagged_count();
    PathEnsemble lift_source = zp;
    if (squared) lift_source.states = zp.aux.at("Z_exact");
    const LiftedProcess xp(lift_source, field.base);

    say(fmt::format("[{}] norms of X_t at q = {} (N = {})", config.name, q, config.norm_truncation));
    const Eigen::MatrixXd norms = lifted_norms_squared(xp, q, config.norm_truncation, threads);
    r.drift = estimate_h(norms, grid, d, zp.flagged);
    const DriftTable h = r.drift.table;  // frozen from here on
    for (int k = 0; k < K; ++k) r.drift_integral += h.component(k, 0) * grid.dt();

    if (is_brownian_delta(config, field)) {
        Eigen::VectorXd oracle(K + 1);
        double worst = 0.0;
        bool ok = true;
        for (int k = 0; k <= K; ++k) {
            oracle(k) = std::sqrt(brownian_delta_mean_square(grid.time(k), q, config.norm_truncation));
            const double gap = std::abs(h.component(k, 0) - oracle(k));
            const double allowed = tol.oracle_sigmas * r.drift.std_error(k) + 1e-12 * oracle(k);
            worst = std::max(worst, gap / std::max(allowed, std::numeric_limits<double>::min()));
            ok = ok && gap <= allowed;
        }
        r.drift_oracle = oracle;
        add("drift_oracle", "Monte Carlo h(t) matches quadrature h(t) at every grid time", ok, true,
            fmt::format("worst |h_mc - h_quad| / allowed = {:.3g} [tol.oracle_sigmas]", worst));
    }

    const Eigen::MatrixXd norms_p = lifted_norms_squared(xp, -config.p, config.norm_truncation, threads);
    {
        std::vector<double> row(config.paths);
        double integral = 0.0;
        for (int k = 0; k < K; ++k) {
            for (std::size_t m = 0; m < config.paths; ++m) row[m] = norms_p(k, static_cast<Eigen::Index>(m));
            integral += mean_estimate(row, zp.flagged).mean * grid.dt();
        }
        r.novikov_majorant_log = 0.5 * d * integral;
    }

    r.assumption4 = assumption4_check(norms, zp.flagged);
    {
        const auto& a = r.assumption4;
        const double se = std::hypot(a.lambda.std_error, a.h2.std_error);
        add("assumption4", "lambda = E sup ||X_t||^2 finite and H2 = sup E ||X_t||^2 <= lambda",
            std::isfinite(a.lambda.mean) && a.h2.mean <= a.lambda.mean + tol.assumption4_sigmas * se, true,
            fmt::format("lambda = {:.6g} +- {:.2g}, H2 = {:.6g} +- {:.2g} at t = {:.4g} [tol.assumption4_sigmas]",
                        a.lambda.mean, a.lambda.std_error, a.h2.mean, a.h2.std_error, grid.time(a.h2_step)));
    }

    // under Q, on an independent ensemble
    say(fmt::format("[{}] measure change and modified simulation", config.name));
    const auto bm_q = sample_brownian(grid, d, config.paths, config.seed, threads, StreamKind::BrownianQ);
    r.change = measure_change(bm_q, h, threads);
    {
        const auto& mm = r.change.martingale_mean;
        add("martingale_mean", "E M_T = 1", std::abs(mm.mean - 1.0) <= tol.martingale_sigmas * mm.std_error, true,
            fmt::format("mean M_T = {:.6g} +- {:.2g}, ESS = {:.1f} [tol.martingale_sigmas]", mm.mean, mm.std_error,
                        r.change.effective_sample_size));
        const auto& nv = r.change.novikov;
        add("novikov", "Novikov value finite and below the -p norm majorant",
            !nv.overflow && std::isfinite(nv.value) && nv.log_value <= r.novikov_majorant_log, true,
            fmt::format("exp({:.6g}) = {:.6g} <= exp({:.6g})", nv.log_value, nv.value, r.novikov_majorant_log));
    }
    const PathEnsemble zq =
        squared ? simulate_example2(transform_bm(bm_q, h)) : simulate_modified(coeffs, h, z0, bm_q, threads);
    r.flagged_q = zq.flagged_count();
    add("no_explosions", "no flagged paths under P or Q", r.flagged_p == 0 && r.flagged_q == 0, true,
        fmt::format("flagged: {} under P, {} under Q", r.flagged_p, r.flagged_q));

    // law of Z_T under P against the law of Z~_T under Q
    {
        say(fmt::format("[{}] law tests ({} replicates)", config.name, config.replicates));
        std::vector<double> wq;
        std::vector<std::size_t> keep_q;
        const double top = r.change.log_weights.maxCoeff();
        for (std::size_t m = 0; m < config.paths; ++m) {
            if (zq.flagged[m] || r.change.overflow[m]) continue;
            keep_q.push_back(m);
            wq.push_back(config.weighted_law_test ? std::exp(r.change.log_weights(static_cast<Eigen::Index>(m)) - top)
                                                  : 1.0);
        }
        const double each = config.level / static_cast<double>(panel.size());
        bool all = true;
        for (std::size_t i = 0; i < panel.size(); ++i) {
            std::vector<double> sp, sq;
            for (std::size_t m = 0; m < config.paths; ++m)
                if (!zp.flagged[m]) sp.push_back(panel[i].value(zp.state_at(m, K)));
            for (std::size_t m : keep_q) sq.push_back(panel[i].value(zq.state_at(m, K)));
            r.law_labels.push_back(panel[i].label());
            r.law.push_back(law_equality_test(sp, sq, wq, each, config.replicates, config.seed + i + 1, threads));
            all = all && r.law.back().pass;
        }
        std::string detail;
        for (std::size_t i = 0; i < r.law.size(); ++i)
            detail += fmt::format("{}{:.4f}/{:.4f}", i ? ", " : "KS/critical: ", r.law[i].statistic, r.law[i].critical);
        add("law_equality",
            fmt::format("{} KS test of psi(Z_T) under P against psi(Z~_T) under Q",
                        config.weighted_law_test ? "weighted" : "unweighted"),
            all, true, detail + fmt::format(" at level {}/{}", config.level, panel.size()));
        if (!config.weighted_law_test)
            add("control_drift", "drift of the unweighted control is large enough to be detected",
                r.drift_integral >= tol.negative_drift, false,
                fmt::format("int h dt = {:.4f} [tol.negative_drift]", r.drift_integral));
    }

    // weak-form residuals on a leading subset of paths, coarse to fine
    {
        say(fmt::format("[{}] residuals on {} paths at {} step sizes", config.name, config.residual_paths,
                        config.residual_levels));
        const int N = config.truncation;
        const auto rp = leading_paths(bm_p, config.residual_paths);
        const auto rq = leading_paths(bm_q, config.residual_paths);
        std::vector<StateOperator> noise;
        for (int j = 0; j < d; ++j)
            noise.push_back([&field, j](const HermiteExpansion& y, const StepContext&) { return apply_A(field, y, j); });
        const StateOperator generator = [&field](const HermiteExpansion& y, const StepContext&) {
            return apply_L(field, y);
        };
        const StateOperator sq_generator = [](const HermiteExpansion& y, const StepContext& c) {
            const double b = brownian_at(c);
            const auto dy = derivative(y, 0);
            return 2.0 * b * b * derivative(dy, 0) - dy;
        };
        const StateOperator sq_noise = [](const HermiteExpansion& y, const StepContext& c) {
            return -2.0 * brownian_at(c) * derivative(y, 0);
        };
        for (int level = 0; level < config.residual_levels; ++level) {
            const int factor = 1 << (config.residual_levels - 1 - level);
            const auto ep = coarsen(rp, factor);
            const auto eq = coarsen(rq, factor);
            const DriftTable hf = h.coarsen(factor);
            const Eigen::MatrixXd hat_increments = transform_increments(eq, hf);
            if (squared) {
                const auto zb = squared_exact(ep);
                r.residuals["base"].push_back(
                    spde_residual(LiftedProcess(zb, field.base), zb.increments, sq_generator, {sq_noise}, panel, N, threads));
                const auto zt = squared_exact(transform_bm(eq, hf));
                const LiftedProcess xt(zt, field.base);
                const StateOperator modified = [hf](const HermiteExpansion& y, const StepContext& c) {
                    const double b = brownian_at(c);
                    const auto dy = derivative(y, 0);
                    return 2.0 * b * b * derivative(dy, 0) - dy + 2.0 * hf.component(c.step, 0) * b * dy;
                };
                r.residuals["modified"].push_back(spde_residual(xt, eq.increments, modified, {sq_noise}, panel, N, threads));
                r.residuals["hat"].push_back(spde_residual(xt, hat_increments, sq_generator, {sq_noise}, panel, N, threads));
                const auto zpr = squared_exact(eq);
                const StateOperator printed = [hf](const HermiteExpansion& y, const StepContext& c) {
                    const double b = brownian_at(c);
                    const auto dy = derivative(y, 0);
                    return 2.0 * b * b * derivative(dy, 0) - (2.0 * b * hf.component(c.step, 0) + 1.0) * dy;
                };
                r.residuals["printed"].push_back(
                    spde_residual(LiftedProcess(zpr, field.base), hat_increments, printed, {sq_noise}, panel, N, threads));
            } else {
                const auto zb = simulate_base(coeffs, z0, ep, threads);
                r.residuals["base"].push_back(
                    spde_residual(LiftedProcess(zb, field.base), zb.increments, generator, noise, panel, N, threads));
                const auto zt = simulate_modified(coeffs, hf, z0, eq, threads);
                r.residuals["modified"].push_back(ito_translation_check(zt, field, hf, panel, N, threads));
                r.residuals["hat"].push_back(
                    spde_residual(LiftedProcess(zt, field.base), hat_increments, generator, noise, panel, N, threads));
                const auto zpr = simulate_base(coeffs, z0, eq, threads);
                const StateOperator printed = [&field, hf](const HermiteExpansion& y, const StepContext& c) {
                    return apply_L(field, y) - apply_L_hat(field, y, hf.at(c.step));
                };
                r.residuals["printed"].push_back(
                    spde_residual(LiftedProcess(zpr, field.base), hat_increments, printed, noise, panel, N, threads));
            }
            r.paired.push_back(paired_comparison(r.residuals["modified"].back(), r.residuals["hat"].back()));
        }
        for (const auto& [name, levels] : r.residuals) {
            const auto conv = residual_convergence(levels);
            r.convergence[name] = conv;
            const double lower = conv.fit.slope - tol.decay_z * conv.fit.std_error;
            std::string halvings;
            for (double o : conv.halving_orders) halvings += fmt::format(" {:.3f}", o);
            add("residual_decay_" + name, fmt::format("mean |R(T)| of the {} identity decays as dt shrinks", name),
                lower > tol.decay_floor, true,
                fmt::format("order {:.3f} +- {:.3f}, halving orders{} [tol.decay_floor, tol.decay_z]", conv.fit.slope,
                            conv.fit.std_error, halvings));
            add("residual_order_" + name,
                fmt::format("order of mean |R(T)| of the {} identity in [{}, {}]", name, tol.order_low, tol.order_high),
                conv.within(tol.order_low, tol.order_high), false,
                fmt::format("order {:.3f} [tol.order_low, tol.order_high]", conv.fit.slope));
        }
        bool agree = true;
        std::string detail;
        for (std::size_t i = 0; i < r.paired.size(); ++i) {
            agree = agree && r.paired[i].agree(tol.paired_sigmas);
            detail += fmt::format("{}{:.3g} +- {:.2g}", i ? ", " : "differences ", r.paired[i].difference.mean,
                                  r.paired[i].difference.std_error);
        }
        add("girsanov_cancellation", "(L + L_hat, B) and (L, B_hat) residuals agree at every step size", agree, true,
            detail + " [tol.paired_sigmas]");
    }

    if (d == 1) r.survey = delta_norm_survey(-config.p, tol.survey_xmax, tol.survey_grid, config.norm_truncation);

    if (!config.output_dir.empty()) write_reports(r, config.output_dir);
    return r;
}

void write_norms_csv(std::ostream& out, const DeltaNormSurvey& survey) {
    out << "x,norm\n";
    for (std::size_t i = 0; i < survey.points.size(); ++i) fmt::print(out, "{},{}\n", survey.points[i], survey.norms[i]);
}

void write_manifest(std::ostream& out, const PipelineReport& r) {
    ScenarioConfig c = r.config;
    c.threads = 0;  // outputs do not depend on either
    c.output_dir.clear();
    const auto& t = r.tolerances;
    fmt::print(out, "hslab_version = {}\n", version_string());
    fmt::print(out, "eigen_version = {}.{}.{}\n", EIGEN_WORLD_VERSION, EIGEN_MAJOR_VERSION, EIGEN_MINOR_VERSION);
#if defined(__VERSION__)
    fmt::print(out, "compiler = {}\n", __VERSION__);
#endif
    fmt::print(out, "seed = {}\n", c.seed);
    out << "rng = mt19937_64 keyed by (seed, stream, path)\n";
    out << "csv_schema_version = 1\n";
    out << "csv.h_table = t,h\n";
    out << "csv.log_weights = path,log_weight\n";
    out << "csv.girsanov_summary = novikov_estimate,martingale_mean,stderr,effective_sample_size\n";
    out << "csv.residuals = dt,mean_abs_residual,stderr,n_paths\n";
    out << "csv.lawtest = functional,statistic,critical,pass\n";
    out << "csv.norms = x,norm\n";
    out << "csv.assumption4 = lambda,lambda_stderr,h2,h2_stderr,h2_time,ordered\n";
    fmt::print(out, "tol.oracle_sigmas = {}\n", t.oracle_sigmas);
    fmt::print(out, "tol.martingale_sigmas = {}\n", t.martingale_sigmas);
    fmt::print(out, "tol.paired_sigmas = {}\n", t.paired_sigmas);
    fmt::print(out, "tol.paired_rounding = 1e-12\n");
    fmt::print(out, "tol.decay_floor = {}\n", t.decay_floor);
    fmt::print(out, "tol.decay_z = {}\n", t.decay_z);
    fmt::print(out, "tol.order_low = {}\n", t.order_low);
    fmt::print(out, "tol.order_high = {}\n", t.order_high);
    fmt::print(out, "tol.assumption4_sigmas = {}\n", t.assumption4_sigmas);
    fmt::print(out, "tol.negative_drift = {}\n", t.negative_drift);
    fmt::print(out, "tol.law_level = {}\n", c.level);
    fmt::print(out, "tol.law_level_per_function = {}\n", c.level / static_cast<double>(r.law.size()));
    fmt::print(out, "tol.law_replicates = {}\n", c.replicates);
    fmt::print(out, "tol.explosion_threshold = {}\n", kExplosionThreshold);
    fmt::print(out, "survey.xmax = {}\nsurvey.grid = {}\n", t.survey_xmax, t.survey_grid);
    out << "\n" << to_ini(c);
}

void write_summary(std::ostream& out, const PipelineReport& r) {
    fmt::print(out, "scenario {} (seed {}, {} paths, {} steps, p = {})\n", r.config.name, r.config.seed, r.config.paths,
               r.config.steps, r.config.p);
    for (const auto& c : r.checks)
        fmt::print(out, "{} {:<28} {}{}: {}\n", pass_word(c.pass), c.id, c.description,
                   c.gating ? "" : " (reported, not gating)", c.detail);
    fmt::print(out, "int h dt = {:.6g}, h(0) = {:.6g}, h(T) = {:.6g}\n", r.drift_integral, r.drift.table.component(0, 0),
               r.drift.table.component(r.config.steps, 0));
    if (!r.survey.points.empty())
        fmt::print(out, "sup_x ||delta_x||_(-p) on [-{}, {}] = {:.6g} at x = {:.4g}\n", r.tolerances.survey_xmax,
                   r.tolerances.survey_xmax, r.survey.max_norm, r.survey.argmax);
    fmt::print(out, "overall: {}\n", pass_word(r.passed()));
}

void write_reports(const PipelineReport& r, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    auto emit = [&](const char* file, auto&& body) {
        std::ostringstream s;
        body(s);
        write_file(dir / file, s.str());
    };
    emit("h_table.csv", [&](std::ostream& s) { write_h_table(s, r.drift.table); });
    emit("log_weights.csv", [&](std::ostream& s) { write_log_weights(s, r.change); });
    emit("girsanov_summary.csv", [&](std::ostream& s) { write_girsanov_summary(s, r.change); });
    for (const auto& [name, levels] : r.residuals) {
        std::ostringstream s;
        write_residual_table(s, levels);
        write_file(dir / fmt::format("residuals_{}.csv", name), s.str());
    }
    emit("lawtest.csv", [&](std::ostream& s) {
        s << "functional,statistic,critical,pass\n";
        for (std::size_t i = 0; i < r.law.size(); ++i)
            fmt::print(s, "{},{},{},{}\n", csv_quote(r.law_labels[i]), r.law[i].statistic, r.law[i].critical,
                       r.law[i].pass ? 1 : 0);
    });
    emit("norms.csv", [&](std::ostream& s) { write_norms_csv(s, r.survey); });
    emit("assumption4.csv", [&](std::ostream& s) {
        const auto& a = r.assumption4;
        s << "lambda,lambda_stderr,h2,h2_stderr,h2_time,ordered\n";
        fmt::print(s, "{},{},{},{},{},{}\n", a.lambda.mean, a.lambda.std_error, a.h2.mean, a.h2.std_error,
                   r.drift.table.grid().time(a.h2_step), a.ordered ? 1 : 0);
    });
    emit("manifest.txt", [&](std::ostream& s) { write_manifest(s, r); });
    emit("summary.txt", [&](std::ostream& s) { write_summary(s, r); });
}

}  // namespace hslab
