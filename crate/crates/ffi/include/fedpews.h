#ifndef FEDPEWS_H
#define FEDPEWS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FpStatus {
  FP_STATUS_OK = 0,
  FP_STATUS_NULL_POINTER = 1,
  FP_STATUS_INVALID_ARGUMENT = 2,
  FP_STATUS_CONFIG = 3,
  FP_STATUS_IO = 4,
  FP_STATUS_FORMAT = 5,
  FP_STATUS_OUT_OF_RANGE = 6,
  FP_STATUS_PANIC = 7,
} FpStatus;

/**
 * A generated or loaded dataset.
 */
typedef struct FpDataset FpDataset;

/**
 * The per-round log of one experiment run.
 */
typedef struct FpRunLog FpRunLog;

/**
 * One round of a run log. `accuracy` and `loss` are meaningful only when
 * `evaluated` is true.
 */
typedef struct FpRoundRecord {
  uint64_t round;
  bool evaluated;
  /**
   * Global test accuracy in percent.
   */
  double accuracy;
  double loss;
  double elapsed_ms;
  bool warmup;
} FpRoundRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread, or null if none.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *fp_last_error(void);

/**
 * Generates `n` synthetic samples (`n` must be a multiple of 16).
 *
 * # Safety
 * `out` must be a valid pointer to write a handle into.
 */
enum FpStatus fp_dataset_generate(size_t n,
                                  uint64_t seed,
                                  double cluster_std,
                                  struct FpDataset **out);

/**
 * Loads a dataset file written by `fp_dataset_write` or `fedpews gen-data`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FpStatus fp_dataset_read(const char *path, struct FpDataset **out);

/**
 * # Safety
 * `ds` must be a live handle and `path` a NUL-terminated string.
 */
enum FpStatus fp_dataset_write(const struct FpDataset *ds, const char *path);

/**
 * Sample count; 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
size_t fp_dataset_len(const struct FpDataset *ds);

/**
 * Copies sample `index` into `features` (room for `features_len` values,
 * at least the feature dimension) and `label`.
 *
 * # Safety
 * `ds` must be a live handle, `features` must point to `features_len`
 * writable doubles and `label` to a writable `uint32_t`.
 */
enum FpStatus fp_dataset_sample(const struct FpDataset *ds,
                                size_t index,
                                double *features,
                                size_t features_len,
                                uint32_t *label);

/**
 * # Safety
 * `ds` must be null or a handle not yet freed.
 */
void fp_dataset_free(struct FpDataset *ds);

/**
 * Runs the experiment described by `config_text` (the `key = value`
 * format of `fedpews run`) for a single `seed`. Nothing is written to disk.
 *
 * # Safety
 * `config_text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FpStatus fp_run_experiment(const char *config_text, uint64_t seed, struct FpRunLog **out);

/**
 * Number of recorded rounds; 0 for a null handle.
 *
 * # Safety
 * `log` must be null or a live handle.
 */
size_t fp_runlog_rounds(const struct FpRunLog *log);

/**
 * # Safety
 * `log` must be a live handle and `out` a valid pointer.
 */
enum FpStatus fp_runlog_record(const struct FpRunLog *log, size_t index, struct FpRoundRecord *out);

/**
 * First round whose test accuracy reaches `target` percent, or 0 if the
 * run never does.
 *
 * # Safety
 * `log` must be a live handle and `out` a valid pointer.
 */
enum FpStatus fp_runlog_rounds_to_target(const struct FpRunLog *log, double target, uint64_t *out);

/**
 * Hex SHA-256 of the final global parameters. Free with `fp_string_free`.
 * Null for a null handle.
 *
 * # Safety
 * `log` must be null or a live handle.
 */
char *fp_runlog_digest(const struct FpRunLog *log);

/**
 * # Safety
 * `log` must be null or a handle not yet freed.
 */
void fp_runlog_free(struct FpRunLog *log);

/**
 * # Safety
 * `s` must be null or a string returned by this library and not yet freed.
 */
void fp_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDPEWS_H */
