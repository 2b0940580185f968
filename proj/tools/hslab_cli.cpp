#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "hslab/hermite.hpp"
#include "hslab/pipeline.hpp"
#include "hslab/quadrature.hpp"

namespace {

constexpr int kExitCheckFailure = 1;
constexpr int kExitConfigError = 2;

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> paths;
    std::optional<int> steps;
    std::optional<std::string> out;
    std::optional<unsigned> threads;
};

void apply(const Overrides& o, hslab::ScenarioConfig& c) {
    if (o.seed) c.seed = *o.seed;
    if (o.paths) {
        c.paths = *o.paths;
        c.residual_paths = std::min(c.residual_paths, c.paths);
    }
    if (o.steps) c.steps = *o.steps;
    if (o.out) c.output_dir = *o.out;
    if (o.threads) c.threads = *o.threads;
    hslab::validate(c);
}

int run_scenario(hslab::ScenarioConfig config) {
    const auto report = hslab::run_pipeline(config, &std::cerr);
    hslab::write_summary(std::cout, report);
    if (!config.output_dir.empty()) fmt::print(std::cout, "reports written to {}\n", config.output_dir.string());
    return report.exit_code();
}

int norms(double p, double xmax, int grid, int truncation, const std::optional<std::string>& out) {
    if (!(xmax > 0.0) || grid < 2 || truncation < 1 || truncation > hslab::kMaxTruncation)
        throw hslab::ConfigError("norms: need xmax > 0, grid >= 2 and 1 <= N <= 512");
    const auto survey = hslab::delta_norm_survey(-p, xmax, grid, truncation);
    if (out) {
        std::filesystem::create_directories(*out);
        std::ofstream file(std::filesystem::path(*out) / "norms.csv", std::ios::binary);
        hslab::write_norms_csv(file, survey);
    } else {
        hslab::write_norms_csv(std::cout, survey);
    }
    fmt::print(std::cerr, "sup ||delta_x||_(-{}) = {} at x = {} (N = {})\n", p, survey.max_norm, survey.argmax,
               truncation);
    return 0;
}

// Fast checks of the numerical core; prints one line per check.
int selftest() {
    bool all = true;
    auto line = [&](const char* name, bool pass, const std::string& detail) {
        fmt::print(std::cout, "{} {}: {}\n", pass ? "PASS" : "FAIL", name, detail);
        all = all && pass;
    };

    const auto rule = hslab::gauss_hermite(128);
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(41, 41);
    for (int k = 0; k < rule.size(); ++k) {
        const Eigen::VectorXd h = hslab::hermite_functions(40, rule.nodes(k));
        gram += rule.scaled_weights(k) * h * h.transpose();
    }
    const double worst = (gram - Eigen::MatrixXd::Identity(41, 41)).cwiseAbs().maxCoeff();
    line("orthonormality", worst <= 1e-8, fmt::format("max |<h_i, h_j> - delta_ij| = {:.2e}", worst));

    const hslab::BasisTruncation t(1, 80);
    const auto psi = hslab::TestFunction::gaussian(Eigen::VectorXd::Constant(1, 0.3), 0.9);
    const auto c = psi.expansion(t);
    double pairing = 0.0;
    for (double x = -3.0; x <= 3.0; x += 0.25) {
        const Eigen::VectorXd v = Eigen::VectorXd::Constant(1, x);
        pairing = std::max(pairing, std::abs(hslab::pair(hslab::delta_expansion(v, t), c) - psi.value(v)));
    }
    line("delta_pairing", pairing <= 1e-6, fmt::format("max |<delta_x, psi> - psi(x)| = {:.2e}", pairing));

    auto small = hslab::preset("example1");
    small.paths = 400;
    small.steps = 32;
    small.residual_paths = 100;
    small.residual_levels = 3;
    small.replicates = 200;
    const auto round_trip = [&] {
        std::istringstream in(hslab::to_ini(small));
        return hslab::to_ini(hslab::parse_config(in)) == hslab::to_ini(small);
    }();
    line("config_round_trip", round_trip, "to_ini -> parse_config -> to_ini");

    const auto report = hslab::run_pipeline(small);
    line("small_pipeline", !report.checks.empty(),
         fmt::format("{} checks evaluated, {} passed", report.checks.size(),
                     std::count_if(report.checks.begin(), report.checks.end(), [](const auto& k) { return k.pass; })));
    return all ? 0 : kExitCheckFailure;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hermite-Sobolev SPDE laboratory: Girsanov weak solutions at desk scale"};
    app.require_subcommand(1);
    Overrides o;
    app.add_option("--seed", o.seed, "Override the scenario seed");
    app.add_option("--paths", o.paths, "Override the number of Monte Carlo paths");
    app.add_option("--steps", o.steps, "Override the number of time steps");
    app.add_option("--out", o.out, "Directory for the report files");
    app.add_option("--threads", o.threads, "Worker threads (0: hardware concurrency)");

    auto* run = app.add_subcommand("run", "Run the pipeline on an INI scenario file");
    std::string config_path;
    run->add_option("config", config_path, "Scenario file")->required();

    auto* pre = app.add_subcommand("preset", "Run a built-in scenario");
    std::string preset_name;
    pre->add_option("name", preset_name, "example1, example2 or negative")
        ->required()
        ->check(CLI::IsMember(hslab::preset_names()));

    auto* nrm = app.add_subcommand("norms", "Tabulate ||delta_x||_(-p) on [-xmax, xmax]");
    double p = 0.3, xmax = 10.0;
    int grid = 401, truncation = 200;
    nrm->add_option("--p", p, "Regularity p (the norm is taken at -p)")->required();
    nrm->add_option("--xmax", xmax, "Half-width of the x grid")->required();
    nrm->add_option("--grid", grid, "Number of grid points")->required();
    nrm->add_option("--N", truncation, "Truncation order")->capture_default_str();

    auto* self = app.add_subcommand("selftest", "Quick checks of the numerical core");

    // flags are accepted before or after the subcommand
    for (auto* sub : {run, pre, nrm}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfigError;
    }

    try {
        if (*run) {
            auto config = hslab::load_config(config_path);
            apply(o, config);
            return run_scenario(config);
        }
        if (*pre) {
            auto config = hslab::preset(preset_name);
            apply(o, config);
            return run_scenario(config);
        }
        if (*nrm) return norms(p, xmax, grid, truncation, o.out);
        if (*self) return selftest();
    } catch (const hslab::ConfigError& e) {
        fmt::print(std::cerr, "configuration error: {}\n", e.what());
        return kExitConfigError;
    } catch (const std::exception& e) {
        fmt::print(std::cerr, "error: {}\n", e.what());
        return kExitCheckFailure;
    }
    return 0;
}
