#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "volterra/experiment.hpp"

using namespace volterra;
namespace fs = std::filesystem;

namespace {

std::string small_bsvie_config(const std::string& outdir) {
    return R"({
      "schema": 1,
      "experiment": "bsvie",
      "model": {"name": "diag_z"},
      "grid": {"T": 1.0, "N": 10},
      "monte_carlo": {"paths": 4000, "seed": 11, "basis": "monomial", "degree": 2},
      "output": {"dir": ")" + outdir + R"("}
    })";
}

} // namespace

TEST_CASE("config: strict parsing") {
    CHECK_THROWS_AS(RunConfig::from_json_text("{"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json_text(R"({"schema": 2})"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json_text(
                        R"({"schema": 1, "experiment": "bsvie",
                            "model": {"name": "diag_z"}, "grid": {"T": 1, "N": 0}})"),
                    ConfigError);
    // unknown keys are hard errors at every nesting level
    CHECK_THROWS_AS(RunConfig::from_json_text(
                        R"({"schema": 1, "experiment": "bsvie", "typo": 1,
                            "model": {"name": "diag_z"}})"),
                    ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json_text(
                        R"({"schema": 1, "experiment": "bsvie",
                            "model": {"name": "diag_z"},
                            "monte_carlo": {"paths": 100, "sede": 1}})"),
                    ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json_text(
                        R"({"schema": 1, "experiment": "wat",
                            "model": {"name": "diag_z"}})"),
                    ConfigError);
}

TEST_CASE("config: defaults and field mapping") {
    const RunConfig cfg = RunConfig::from_json_text(small_bsvie_config("/tmp/x"));
    CHECK(cfg.kind == RunConfig::Kind::Bsvie);
    CHECK(cfg.model_name == "diag_z");
    CHECK(cfg.steps == 10);
    CHECK(cfg.paths == 4000);
    CHECK(cfg.basis.degree == 2);
    CHECK(cfg.output_dir == "/tmp/x");
    CHECK(cfg.threads == 1);
}

TEST_CASE("validate_only catches model-level problems without computing") {
    RunConfig cfg = RunConfig::from_json_text(small_bsvie_config("/tmp/x"));
    validate_only(cfg);  // fine
    cfg.kind = RunConfig::Kind::Pde;
    cfg.pde.scheme = PDESolverConfig::Scheme::Explicit;
    cfg.cells = 500;  // dx tiny -> CFL violated
    CHECK_THROWS_AS(validate_only(cfg), CflViolation);
}

TEST_CASE("run_experiment: small bsvie run passes its checks and writes artifacts") {
    const std::string dir = "/tmp/vk_test_run";
    fs::remove_all(dir);
    RunConfig cfg = RunConfig::from_json_text(small_bsvie_config(dir));
    cfg.tolerances["rms_y_mean"] = 0.06;
    cfg.tolerances["rms_z_mean"] = 0.06;
    const Report rep = run_experiment(cfg);
    CHECK(rep.passed());
    CHECK(fs::exists(fs::path(dir) / "solution.csv"));
    CHECK(fs::exists(fs::path(dir) / "errors.csv"));
    CHECK(fs::exists(fs::path(dir) / "summary.txt"));
    CHECK(fs::exists(fs::path(dir) / "manifest.csv"));
    for (const auto& a : rep.artifacts) CHECK(a.checksum.size() == 16);
}

TEST_CASE("run_experiment: identical config and seed give byte-identical CSVs") {
    RunConfig cfg = RunConfig::from_json_text(small_bsvie_config("/tmp/vk_det_a"));
    fs::remove_all("/tmp/vk_det_a");
    fs::remove_all("/tmp/vk_det_b");
    run_experiment(cfg);
    cfg.output_dir = "/tmp/vk_det_b";
    cfg.threads = 3;
    run_experiment(cfg);
    for (const char* name : {"solution.csv", "errors.csv"})
        CHECK(file_checksum(std::string("/tmp/vk_det_a/") + name) ==
              file_checksum(std::string("/tmp/vk_det_b/") + name));
}

TEST_CASE("convergence_study: guards on levels") {
    RunConfig cfg = RunConfig::from_json_text(small_bsvie_config("/tmp/vk_conv_bad"));
    CHECK_THROWS_AS(convergence_study(cfg, {10, 20}), ConfigError);
    CHECK_THROWS_AS(convergence_study(cfg, {10, 20, 20}), ConfigError);
}

TEST_CASE("convergence_study: diag_z diagonal error shrinks across levels") {
    fs::remove_all("/tmp/vk_conv");
    RunConfig cfg = RunConfig::from_json_text(R"({
      "schema": 1,
      "experiment": "bsvie",
      "model": {"name": "diag_z"},
      "grid": {"T": 1.0, "N": 8},
      "monte_carlo": {"paths": 4000, "seed": 17, "basis": "monomial", "degree": 2},
      "output": {"dir": "/tmp/vk_conv"}
    })");
    const Report rep = convergence_study(cfg, {8, 16, 32});
    bool found = false;
    for (const auto& c : rep.checks)
        if (c.name == "error_decreasing") {
            found = true;
            CHECK(c.passed);
        }
    CHECK(found);
    CHECK(fs::exists("/tmp/vk_conv/convergence.csv"));
}

TEST_CASE("file_checksum is stable and content-sensitive") {
    const std::string p1 = "/tmp/vk_ck_a.txt", p2 = "/tmp/vk_ck_b.txt";
    std::ofstream(p1) << "hello,1\n";
    std::ofstream(p2) << "hello,2\n";
    CHECK(file_checksum(p1) == file_checksum(p1));
    CHECK(file_checksum(p1) != file_checksum(p2));
}
