#include "volterra_kit.h"

#include <string>

#include "volterra/experiment.hpp"

using volterra::ConfigError;
using volterra::Report;
using volterra::RunConfig;
using volterra::SolverError;

struct vk_experiment {
    RunConfig config;
};

struct vk_report {
    Report report;
};

namespace {

thread_local std::string g_last_error;

vk_status fail(vk_status code, const std::string& what) {
    g_last_error = what;
    return code;
}

template <typename Fn>
vk_status guarded(Fn&& fn) {
    try {
        return fn();
    } catch (const ConfigError& e) {
        return fail(VK_CONFIG_ERROR, e.what());
    } catch (const SolverError& e) {
        return fail(VK_NUMERICAL_ERROR, e.what());
    } catch (const std::exception& e) {
        return fail(VK_NUMERICAL_ERROR, e.what());
    }
}

} // namespace

extern "C" {

const char* vk_version(void) { return "0.1.0"; }

const char* vk_last_error(void) { return g_last_error.c_str(); }

vk_status vk_experiment_open(const char* config_path, vk_experiment** out) {
    if (!config_path || !out) return fail(VK_INVALID_ARGUMENT, "null argument");
    *out = nullptr;
    return guarded([&]() {
        auto* exp = new vk_experiment{RunConfig::from_file(config_path)};
        *out = exp;
        return VK_OK;
    });
}

vk_status vk_experiment_open_json(const char* json_text, vk_experiment** out) {
    if (!json_text || !out) return fail(VK_INVALID_ARGUMENT, "null argument");
    *out = nullptr;
    return guarded([&]() {
        auto* exp = new vk_experiment{RunConfig::from_json_text(json_text)};
        *out = exp;
        return VK_OK;
    });
}

void vk_experiment_close(vk_experiment* exp) { delete exp; }

vk_status vk_experiment_set_threads(vk_experiment* exp, int threads) {
    if (!exp) return fail(VK_INVALID_ARGUMENT, "null experiment");
    if (threads < 1) return fail(VK_INVALID_ARGUMENT, "threads must be >= 1");
    exp->config.threads = threads;
    return VK_OK;
}

vk_status vk_experiment_set_output_dir(vk_experiment* exp, const char* dir) {
    if (!exp || !dir) return fail(VK_INVALID_ARGUMENT, "null argument");
    exp->config.output_dir = dir;
    return VK_OK;
}

vk_status vk_experiment_set_dump_ensemble(vk_experiment* exp, int enabled) {
    if (!exp) return fail(VK_INVALID_ARGUMENT, "null experiment");
    exp->config.dump_ensemble = enabled != 0;
    return VK_OK;
}

vk_status vk_experiment_validate(vk_experiment* exp) {
    if (!exp) return fail(VK_INVALID_ARGUMENT, "null experiment");
    return guarded([&]() {
        volterra::validate_only(exp->config);
        return VK_OK;
    });
}

vk_status vk_experiment_run(vk_experiment* exp, vk_report** out_report) {
    if (!exp || !out_report) return fail(VK_INVALID_ARGUMENT, "null argument");
    *out_report = nullptr;
    return guarded([&]() {
        Report rep = volterra::run_experiment(exp->config);
        const bool passed = rep.passed();
        *out_report = new vk_report{std::move(rep)};
        if (!passed) return fail(VK_TOLERANCE_FAILURE, "tolerance check failed");
        return VK_OK;
    });
}

vk_status vk_experiment_converge(vk_experiment* exp, const int* levels,
                                 size_t n_levels, vk_report** out_report) {
    if (!exp || !out_report || (!levels && n_levels > 0))
        return fail(VK_INVALID_ARGUMENT, "null argument");
    *out_report = nullptr;
    return guarded([&]() {
        std::vector<int> lv(levels, levels + n_levels);
        if (lv.empty()) lv = exp->config.levels;
        Report rep = volterra::convergence_study(exp->config, lv);
        const bool passed = rep.passed();
        *out_report = new vk_report{std::move(rep)};
        if (!passed) return fail(VK_TOLERANCE_FAILURE, "tolerance check failed");
        return VK_OK;
    });
}

int vk_report_passed(const vk_report* report) {
    return report && report->report.passed() ? 1 : 0;
}

const char* vk_report_summary(const vk_report* report) {
    return report ? report->report.summary_text.c_str() : "";
}

size_t vk_report_artifact_count(const vk_report* report) {
    return report ? report->report.artifacts.size() : 0;
}

const char* vk_report_artifact_path(const vk_report* report, size_t index) {
    if (!report || index >= report->report.artifacts.size()) return nullptr;
    return report->report.artifacts[index].path.c_str();
}

const char* vk_report_artifact_checksum(const vk_report* report, size_t index) {
    if (!report || index >= report->report.artifacts.size()) return nullptr;
    return report->report.artifacts[index].checksum.c_str();
}

size_t vk_report_check_count(const vk_report* report) {
    return report ? report->report.checks.size() : 0;
}

const char* vk_report_check_name(const vk_report* report, size_t index) {
    if (!report || index >= report->report.checks.size()) return nullptr;
    return report->report.checks[index].name.c_str();
}

int vk_report_check_passed(const vk_report* report, size_t index) {
    if (!report || index >= report->report.checks.size()) return 0;
    return report->report.checks[index].passed ? 1 : 0;
}

double vk_report_check_value(const vk_report* report, size_t index) {
    if (!report || index >= report->report.checks.size()) return 0.0;
    return report->report.checks[index].value;
}

double vk_report_check_threshold(const vk_report* report, size_t index) {
    if (!report || index >= report->report.checks.size()) return 0.0;
    return report->report.checks[index].threshold;
}

void vk_report_free(vk_report* report) { delete report; }

} // extern "C"
