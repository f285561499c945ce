#ifndef REDDCHECK_H
#define REDDCHECK_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum RcStatus {
  RC_STATUS_OK = 0,
  RC_STATUS_NULL_POINTER = 1,
  RC_STATUS_INVALID_ARGUMENT = 2,
  RC_STATUS_INGEST = 3,
  RC_STATUS_SOLVER = 4,
  RC_STATUS_BUFFER_TOO_SMALL = 5,
  RC_STATUS_PANIC = 6,
} RcStatus;

typedef enum RcMethod {
  RC_METHOD_SCM = 0,
  RC_METHOD_ASCM = 1,
} RcMethod;

// A synthetic-control fit of one project on its pre-treatment years.
typedef struct RcFit RcFit;

// A loaded or simulated set of project and donor panels.
typedef struct RcPanelSet RcPanelSet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the
// next failing call on the same thread.
const char *rc_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *rc_version(void);

// `r_d - r_f`.
//
// # Safety
// `out` must be a valid pointer to a double.
enum RcStatus rc_bias_correction_factor(double r_d, double r_f, double *out);

// Observed difference divided by `r_d - r_f`.
//
// # Safety
// `out` must be a valid pointer to a double.
enum RcStatus rc_bias_correct_difference(double r_d,
                                         double r_f,
                                         double observed_diff_ha,
                                         double *out);

// Expected sensor reading for a site of `area_ha` with `true_defor_ha` lost.
//
// # Safety
// `out` must be a valid pointer to a double.
enum RcStatus rc_bias_predicted_deforestation(double r_d,
                                              double r_f,
                                              double area_ha,
                                              double true_defor_ha,
                                              double *out);

// Credits per hectare of avoided deforestation.
//
// # Safety
// `out` must be a valid pointer to a double.
enum RcStatus rc_per_hectare_factor(double expected_credits, double baseline_ha, double *out);

// SC offsets over credited offsets; `over_100` is set when the share exceeds one.
//
// # Safety
// `fraction` and `over_100` must be valid pointers.
enum RcStatus rc_percent_real(double offsets_sc,
                              double denominator_credits,
                              double *fraction,
                              bool *over_100);

// Loads panels from CSV files. `covariates` may be null.
//
// # Safety
// Path arguments must be NUL-terminated strings; `out` must be valid.
enum RcStatus rc_panelset_load(const char *sites,
                               const char *covariates,
                               const char *meta,
                               struct RcPanelSet **out);

// Generates a synthetic panel from a JSON scenario (fields as in the
// `simulate` subcommand). An empty object gives the default scenario.
//
// # Safety
// `spec_json` must be a NUL-terminated string; `out` must be valid.
enum RcStatus rc_panelset_simulate(const char *spec_json, struct RcPanelSet **out);

// # Safety
// `set` must come from this library and not be used afterwards. Null is ignored.
void rc_panelset_free(struct RcPanelSet *set);

// # Safety
// `set` and `out` must be valid.
enum RcStatus rc_panelset_project_count(const struct RcPanelSet *set, uintptr_t *out);

// # Safety
// `set` and `out` must be valid.
enum RcStatus rc_panelset_donor_count(const struct RcPanelSet *set, uintptr_t *out);

// Fits one project on its pre-treatment years with the default donor filter
// (or none when `filter` is false) and default solver settings.
//
// # Safety
// `set`, `project_id` and `out` must be valid.
enum RcStatus rc_fit_project(const struct RcPanelSet *set,
                             const char *project_id,
                             enum RcMethod method,
                             bool filter,
                             struct RcFit **out);

// # Safety
// `fit` must come from this library and not be used afterwards. Null is ignored.
void rc_fit_free(struct RcFit *fit);

// # Safety
// `fit` and `out` must be valid.
enum RcStatus rc_fit_donor_count(const struct RcFit *fit, uintptr_t *out);

// Copies the donor weights into `buf`. Returns `BUFFER_TOO_SMALL` when `len`
// is less than the donor count.
//
// # Safety
// `buf` must point to at least `len` doubles.
enum RcStatus rc_fit_weights(const struct RcFit *fit, double *buf, uintptr_t len);

// Mean post-treatment gap between project and synthetic control (ha).
//
// # Safety
// `fit` and `out` must be valid.
enum RcStatus rc_fit_att(const struct RcFit *fit, double *out);

// Pre-treatment RMSPE of the fit (ha).
//
// # Safety
// `fit` and `out` must be valid.
enum RcStatus rc_fit_train_rmspe(const struct RcFit *fit, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REDDCHECK_H */
