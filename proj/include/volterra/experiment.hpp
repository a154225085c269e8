#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "volterra/bsvie.hpp"
#include "volterra/mv.hpp"

namespace volterra {

/// One experiment described by a JSON config file (versioned schema;
/// unknown keys are hard errors).  See README for the full schema.
struct RunConfig {
    enum class Kind { Pde, Bsvie, FeynmanKac, Mv, Convergence };
    Kind kind = Kind::Bsvie;

    // model selection (non-mv experiments)
    std::string model_name;
    std::map<std::string, double> model_params;

    double horizon = 1.0;
    int steps = 50;

    // spatial grid (pde / feynman-kac)
    double x_lo = -4.5, x_hi = 4.5;
    int cells = 180;

    // monte carlo
    std::size_t paths = 100000;
    std::uint64_t seed = 20240601;
    RegressionBasis basis;
    std::size_t store_paths = 4096;

    // solver options
    PDESolverConfig pde;
    BsvieSolverOptions bsvie;
    bool solve_derivative = false;
    bool run_picard = false;
    int picard_max_iters = 10;
    double picard_tol = 1e-3;
    bool estimate_bmo = false;

    // mv scenario
    std::optional<MVModel> mv;
    bool mv_constant_coeffs = false;  // beta and sigma declared constant

    // convergence
    std::vector<int> levels;
    Kind base_kind = Kind::Bsvie;

    // tolerances (echoed into the report; name -> threshold)
    std::map<std::string, double> tolerances;

    std::string output_dir = "out";
    bool dump_ensemble = false;
    int threads = 1;

    static RunConfig from_file(const std::string& path);
    static RunConfig from_json_text(const std::string& text);
};

struct ReportCheck {
    std::string name;
    double value = 0.0;
    double threshold = 0.0;
    bool passed = false;
    std::string detail;
};

struct ReportArtifact {
    std::string path;
    std::string checksum;  // fnv1a-64 of the file bytes, hex
    std::uint64_t bytes = 0;
};

struct Report {
    std::vector<ReportCheck> checks;
    std::vector<ReportArtifact> artifacts;
    std::string summary_text;
    bool passed() const {
        for (const auto& c : checks)
            if (!c.passed) return false;
        return true;
    }
};

/// Executes the configured experiment end to end, writing CSV artifacts,
/// manifest.csv and summary.txt into the output directory.  Tolerance
/// checks and their thresholds are echoed into the report.
Report run_experiment(const RunConfig& config);

/// Re-runs the base experiment per refinement level (paths scaled as
/// J ~ N^2), fits the observed order, and emits the convergence CSV.
Report convergence_study(RunConfig config, const std::vector<int>& levels);

/// Parse + model checks only; throws on invalid configuration.
void validate_only(const RunConfig& config);

/// fnv1a-64 checksum of a file's bytes, as 16 hex digits.
std::string file_checksum(const std::string& path);

} // namespace volterra
