#ifndef ANTMUTE_H
#define ANTMUTE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum AmStatus {
  AM_STATUS_OK = 0,
  AM_STATUS_NULL_POINTER = 1,
  AM_STATUS_INVALID_ARGUMENT = 2,
  AM_STATUS_IO = 3,
  AM_STATUS_FORMAT = 4,
  AM_STATUS_INVARIANT = 5,
  AM_STATUS_NUMERICAL = 6,
  AM_STATUS_PANIC = 7,
} AmStatus;

/**
 * Dataset split selector.
 */
typedef enum AmSplit {
  AM_SPLIT_TRAIN = 0,
  AM_SPLIT_VALIDATION = 1,
  AM_SPLIT_TEST = 2,
} AmSplit;

/**
 * Solver selector for heuristic-run queries.
 */
typedef enum AmSolver {
  AM_SOLVER_GREEDY = 0,
  AM_SOLVER_SEQUENTIAL = 1,
  AM_SOLVER_FIXED_COLUMN = 2,
  AM_SOLVER_FIXED_ROW = 3,
  AM_SOLVER_NAM = 4,
} AmSolver;

/**
 * Experiment configuration.
 */
typedef struct AmConfig AmConfig;

/**
 * Labeled dataset.
 */
typedef struct AmDataset AmDataset;

/**
 * Per-slot solver comparison.
 */
typedef struct AmHeuristicRun AmHeuristicRun;

/**
 * Classifier checkpoint.
 */
typedef struct AmModel AmModel;

/**
 * Accuracy and QoS guarantee of a model on one split.
 */
typedef struct AmMetrics {
  size_t samples;
  double accuracy;
  double qos_guarantee;
} AmMetrics;

/**
 * Per-slot FPO totals of the analytic model.
 */
typedef struct AmFpoSummary {
  double greedy;
  double sequential;
  double fixed_column;
  double nn;
} AmFpoSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null after a success.
 * Valid until the next call into the library on the same thread.
 */
const char *am_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *am_version(void);

/**
 * Built-in profile, `"desk"` or `"full"`.
 *
 * # Safety
 * `name` must be a NUL-terminated string; `out` must be valid for writes.
 */
enum AmStatus am_config_profile(const char *name, struct AmConfig **out_cfg);

/**
 * Loads and validates a JSON configuration file.
 *
 * # Safety
 * `file` must be a NUL-terminated path; `out_cfg` must be valid for writes.
 */
enum AmStatus am_config_load(const char *file, struct AmConfig **out_cfg);

/**
 * # Safety
 * `cfg` must be a live configuration handle; `file` a NUL-terminated path.
 */
enum AmStatus am_config_save(const struct AmConfig *cfg, const char *file);

/**
 * Derives every seed of the configuration from `base`.
 *
 * # Safety
 * `cfg` must be a live configuration handle.
 */
enum AmStatus am_config_reseed(struct AmConfig *cfg, uint64_t base);

/**
 * Sets the dataset size.
 *
 * # Safety
 * `cfg` must be a live configuration handle.
 */
enum AmStatus am_config_set_dataset_size(struct AmConfig *cfg, size_t drops, size_t slots_per_drop);

/**
 * Sets the epoch budget of both training phases.
 *
 * # Safety
 * `cfg` must be a live configuration handle.
 */
enum AmStatus am_config_set_epochs(struct AmConfig *cfg, size_t symmetric, size_t asymmetric);

/**
 * Configuration hash as 16 hex digits plus NUL; `buf` needs 17 bytes.
 *
 * # Safety
 * `cfg` must be a live handle; `buf` valid for `len` bytes.
 */
enum AmStatus am_config_hash(const struct AmConfig *cfg, char *buf, size_t len);

/**
 * Number of antenna configuration classes.
 *
 * # Safety
 * `cfg` must be a live handle; `out_classes` valid for writes.
 */
enum AmStatus am_config_classes(const struct AmConfig *cfg, size_t *out_classes);

/**
 * # Safety
 * `cfg` must be null or a handle not yet freed.
 */
void am_config_free(struct AmConfig *cfg);

/**
 * # Safety
 * `cfg` must be a live handle; `out_ds` valid for writes.
 */
enum AmStatus am_dataset_generate(const struct AmConfig *cfg, struct AmDataset **out_ds);

/**
 * # Safety
 * `file` must be a NUL-terminated path; `out_ds` valid for writes.
 */
enum AmStatus am_dataset_read(const char *file, struct AmDataset **out_ds);

/**
 * # Safety
 * `ds` must be a live handle; `file` a NUL-terminated path.
 */
enum AmStatus am_dataset_write(const struct AmDataset *ds, const char *file);

/**
 * Sample count and infeasible-slot count.
 *
 * # Safety
 * `ds` must be a live handle; both out-pointers valid for writes.
 */
enum AmStatus am_dataset_counts(const struct AmDataset *ds,
                                size_t *out_samples,
                                size_t *out_infeasible);

/**
 * # Safety
 * `ds` must be null or a handle not yet freed.
 */
void am_dataset_free(struct AmDataset *ds);

/**
 * Symmetric phase from a fresh seeded model.
 *
 * # Safety
 * `cfg` and `ds` must be live handles; `out_model` valid for writes.
 */
enum AmStatus am_model_train_symmetric(const struct AmConfig *cfg,
                                       const struct AmDataset *ds,
                                       struct AmModel **out_model);

/**
 * Asymmetric retraining of a copy of `base` with the configured loss.
 *
 * # Safety
 * `cfg`, `ds` and `base` must be live handles; `out_model` valid for writes.
 */
enum AmStatus am_model_train_asymmetric(const struct AmConfig *cfg,
                                        const struct AmDataset *ds,
                                        const struct AmModel *base,
                                        struct AmModel **out_model);

/**
 * # Safety
 * `file` must be a NUL-terminated path; `out_model` valid for writes.
 */
enum AmStatus am_model_load(const char *file, struct AmModel **out_model);

/**
 * # Safety
 * `model` must be a live handle; `file` a NUL-terminated path.
 */
enum AmStatus am_model_save(const struct AmModel *model, const char *file);

/**
 * Input length expected by [`am_model_predict`].
 *
 * # Safety
 * `model` must be a live handle; `out_len` valid for writes.
 */
enum AmStatus am_model_input_len(const struct AmModel *model, size_t *out_len);

/**
 * Predicted class for one feature tensor of `len` floats.
 *
 * # Safety
 * `model` must be a live handle; `features` valid for `len` reads;
 * `out_class` valid for writes.
 */
enum AmStatus am_model_predict(const struct AmModel *model,
                               const float *features,
                               size_t len,
                               size_t *out_class);

/**
 * # Safety
 * All handles must be live; `out_metrics` valid for writes.
 */
enum AmStatus am_model_evaluate(const struct AmConfig *cfg,
                                const struct AmDataset *ds,
                                const struct AmModel *model,
                                enum AmSplit split,
                                struct AmMetrics *out_metrics);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void am_model_free(struct AmModel *model);

/**
 * Runs the heuristic solvers, and the classifier when `model` is non-null.
 *
 * # Safety
 * `cfg` must be live, `model` null or live, `out_run` valid for writes.
 */
enum AmStatus am_heuristics_run(const struct AmConfig *cfg,
                                const struct AmModel *model,
                                struct AmHeuristicRun **out_run);

/**
 * Slot count, mean active elements and energy saving of one solver.
 *
 * # Safety
 * `cfg` and `run` must be live handles; out-pointers valid for writes.
 */
enum AmStatus am_heuristics_summary(const struct AmConfig *cfg,
                                    const struct AmHeuristicRun *run,
                                    enum AmSolver solver,
                                    size_t *out_slots,
                                    double *out_mean_active,
                                    double *out_saving);

/**
 * # Safety
 * `run` must be null or a handle not yet freed.
 */
void am_heuristics_free(struct AmHeuristicRun *run);

/**
 * FPOs of one beamforming-plus-rate evaluation with `m_i` active antennas.
 *
 * # Safety
 * `out_fpo` must be valid for writes.
 */
enum AmStatus am_fpo_iteration(size_t m_i,
                               size_t users,
                               size_t rx_antennas,
                               size_t streams,
                               size_t n_prb,
                               double *out_fpo);

/**
 * Analytic per-slot FPOs for the configuration.
 *
 * # Safety
 * `cfg` must be a live handle; `out_summary` valid for writes.
 */
enum AmStatus am_fpo_summary(const struct AmConfig *cfg, struct AmFpoSummary *out_summary);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ANTMUTE_H */
