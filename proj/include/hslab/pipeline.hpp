#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "hslab/girsanov.hpp"
#include "hslab/verifier.hpp"

namespace hslab {

/// Invalid or unreadable scenario configuration (CLI exit status 2).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class ProcessKind {
    Sde,              // Z solves dZ = sigma_bar(Z) dB + b_bar(Z) dt, X = tau_Z phi
    SquaredBrownian,  // Z = B^2 (Euler recursion Z += 2 B dB + dt), X = delta_Z
};

/// Desk-scale ceilings.
constexpr int kMaxSteps = 1 << 14;
constexpr std::size_t kMaxPaths = 1'000'000;
constexpr int kMaxTruncation = 512;

struct ScenarioConfig {
    std::string name = "scenario";
    ProcessKind process = ProcessKind::Sde;
    int dim = 1;
    double p = 0.3;
    int truncation = 80;        // N for residuals and operators
    int norm_truncation = 200;  // N for the norms behind h
    double horizon = 1.0;
    int steps = 256;
    std::size_t paths = 10000;
    std::uint64_t seed = 42;
    std::size_t residual_paths = 2000;
    int residual_levels = 4;  // dt = T/K * 2^(levels-1), ..., T/K
    unsigned threads = 0;     // 0: hardware concurrency

    std::map<std::string, std::string> sigma;  // "sigma_ij" -> coefficient spec
    std::map<std::string, std::string> drift;  // "drift_i" -> coefficient spec
    std::string base = "delta 0";
    std::vector<std::string> panel;  // empty: default panel

    bool weighted_law_test = true;
    int replicates = 1000;
    double level = 0.05;  // family-wise, split over the panel

    std::filesystem::path output_dir;
};

/// Reads an INI file; unknown sections and keys, malformed values and
/// violated invariants raise ConfigError naming the key (and the line for
/// syntax errors).
ScenarioConfig load_config(const std::filesystem::path& path);
ScenarioConfig parse_config(std::istream& in, const std::string& source = "<config>");

/// Built-in scenarios: "example1", "example2", "negative".
ScenarioConfig preset(std::string_view name);
std::vector<std::string> preset_names();

/// Throws ConfigError on any violated invariant.
void validate(const ScenarioConfig& config);

/// The config as INI text that parse_config reads back to the same values.
std::string to_ini(const ScenarioConfig& config);

/// Interpreted config pieces.
CoefficientField build_field(const ScenarioConfig& config);
std::vector<TestFunction> build_panel(const ScenarioConfig& config);
Profile parse_profile(const std::string& spec, int dim, int truncation);

/// Tolerances used by the pipeline; every one is written to the manifest.
struct Tolerances {
    double oracle_sigmas = 3.0;      // MC h vs quadrature h
    double martingale_sigmas = 3.0;  // E M_T = 1
    double paired_sigmas = 2.0;      // (L + L_hat, B) vs (L, B_hat)
    double decay_floor = 0.25;       // residual order lower confidence bound
    double decay_z = 1.96;
    double order_low = 0.6;  // target order window (reported, not gating)
    double order_high = 1.4;
    double assumption4_sigmas = 2.0;
    double negative_drift = 0.5;  // int h dt for the unweighted control
    double survey_xmax = 10.0;
    int survey_grid = 401;
};

struct Check {
    std::string id;
    std::string description;
    bool pass = false;
    bool gating = true;
    std::string detail;
};

struct PipelineReport {
    ScenarioConfig config;
    Tolerances tolerances;
    DriftEstimate drift;
    std::optional<Eigen::VectorXd> drift_oracle;  // quadrature h for the Brownian delta
    MeasureChange change;
    double novikov_majorant_log = 0.0;  // 1/2 int E||X_s||_{-p}^2 ds
    double drift_integral = 0.0;        // int h dt
    std::map<std::string, std::vector<ResidualReport>> residuals;
    std::map<std::string, ConvergenceReport> convergence;
    std::vector<PairedComparison> paired;  // modified vs hat, coarse to fine
    std::vector<std::string> law_labels;
    std::vector<LawTestReport> law;
    Assumption4Report assumption4;
    DeltaNormSurvey survey;
    std::size_t flagged_p = 0;
    std::size_t flagged_q = 0;
    std::vector<Check> checks;

    bool passed() const;
    /// 0 when every gating check passes, 1 otherwise.
    int exit_code() const { return passed() ? 0 : 1; }
};

/// Simulate under P, freeze h, change measure on an independent ensemble,
/// simulate the modified SDE, then run the residual, cancellation, law and
/// moment bound checks. Writes the report files when config.output_dir is set.
/// Progress lines go to `log` when given.
PipelineReport run_pipeline(const ScenarioConfig& config, std::ostream* log = nullptr);

/// h_table.csv, log_weights.csv, girsanov_summary.csv, residuals_<variant>.csv,
/// lawtest.csv, norms.csv, assumption4.csv, manifest.txt and summary.txt.
void write_reports(const PipelineReport& report, const std::filesystem::path& dir);

void write_summary(std::ostream& out, const PipelineReport& report);
void write_manifest(std::ostream& out, const PipelineReport& report);
/// Rows "x,norm".
void write_norms_csv(std::ostream& out, const DeltaNormSurvey& survey);

std::string version_string();

}  // namespace hslab
