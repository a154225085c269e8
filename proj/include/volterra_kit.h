#ifndef VOLTERRA_KIT_H
#define VOLTERRA_KIT_H

/* C interface to the volterra-kit solver suite.  Handles are opaque; every
 * call reports a vk_status, with detail text available from vk_last_error().
 * Status values match the CLI exit codes. */

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum vk_status {
    VK_OK = 0,
    VK_TOLERANCE_FAILURE = 1,
    VK_CONFIG_ERROR = 2,
    VK_NUMERICAL_ERROR = 3,
    VK_INVALID_ARGUMENT = 4
} vk_status;

typedef struct vk_experiment vk_experiment;
typedef struct vk_report vk_report;

const char* vk_version(void);

/* Detail message for the last failing call on this thread. */
const char* vk_last_error(void);

/* Load and parse a JSON experiment configuration. */
vk_status vk_experiment_open(const char* config_path, vk_experiment** out);
vk_status vk_experiment_open_json(const char* json_text, vk_experiment** out);
void vk_experiment_close(vk_experiment* exp);

vk_status vk_experiment_set_threads(vk_experiment* exp, int threads);
vk_status vk_experiment_set_output_dir(vk_experiment* exp, const char* dir);
vk_status vk_experiment_set_dump_ensemble(vk_experiment* exp, int enabled);

/* Parse + model checks only; no computation. */
vk_status vk_experiment_validate(vk_experiment* exp);

/* Full run.  On VK_OK or VK_TOLERANCE_FAILURE *out_report is set and must be
 * released with vk_report_free. */
vk_status vk_experiment_run(vk_experiment* exp, vk_report** out_report);

/* Convergence study over strictly increasing refinement levels. */
vk_status vk_experiment_converge(vk_experiment* exp, const int* levels,
                                 size_t n_levels, vk_report** out_report);

int vk_report_passed(const vk_report* report);
const char* vk_report_summary(const vk_report* report);
size_t vk_report_artifact_count(const vk_report* report);
const char* vk_report_artifact_path(const vk_report* report, size_t index);
const char* vk_report_artifact_checksum(const vk_report* report, size_t index);
size_t vk_report_check_count(const vk_report* report);
const char* vk_report_check_name(const vk_report* report, size_t index);
int vk_report_check_passed(const vk_report* report, size_t index);
double vk_report_check_value(const vk_report* report, size_t index);
double vk_report_check_threshold(const vk_report* report, size_t index);
void vk_report_free(vk_report* report);

#ifdef __cplusplus
}
#endif

#endif /* VOLTERRA_KIT_H */
