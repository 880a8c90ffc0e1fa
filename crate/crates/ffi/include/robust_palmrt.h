#ifndef ROBUST_PALMRT_H
#define ROBUST_PALMRT_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum PalmrtStatus {
  PALMRT_STATUS_OK = 0,
  PALMRT_STATUS_NULL_POINTER = 1,
  PALMRT_STATUS_INVALID_ARGUMENT = 2,
  PALMRT_STATUS_INVALID_DATA = 3,
  PALMRT_STATUS_NUMERICAL = 4,
  PALMRT_STATUS_PANIC = 5,
} PalmrtStatus;

/**
 * Fitter and evaluator pairs for the location test.
 */
typedef enum PalmrtMethod {
  PALMRT_METHOD_OLS_L2 = 0,
  PALMRT_METHOD_OLS_L1 = 1,
  PALMRT_METHOD_OLS_HUBER = 2,
  PALMRT_METHOD_HUBER_HUBER = 3,
} PalmrtMethod;

/**
 * Opaque dataset handle.
 */
typedef struct PalmrtDataset PalmrtDataset;

/**
 * Summary of one test.
 */
typedef struct PalmrtResult {
  double p_value;
  /**
   * Sum of the comparison indicators.
   */
  double indicator_sum;
  /**
   * Mean of the statistic over the fits with x in its original order.
   */
  double omega_orig_mean;
  size_t permutations;
  uint64_t seed;
  /**
   * Fits that fell back to a floor scale or clamped spread.
   */
  size_t degenerate_fits;
  /**
   * Fits that hit the iteration limit.
   */
  size_t nonconverged_fits;
} PalmrtResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or NULL if none.
 * The pointer is owned by the library.
 */
const char *palmrt_last_error(void);

/**
 * Builds a dataset from column-major arrays: `y` has `n` entries, `x` has
 * `n * d` and `z` has `n * p`. `z` should include an intercept column if
 * one is wanted; `p` may be 0.
 *
 * # Safety
 * Each non-null array must hold the stated number of doubles; `out` must
 * be writable.
 */
enum PalmrtStatus palmrt_dataset_new(size_t n,
                                     const double *y,
                                     const double *x,
                                     size_t d,
                                     const double *z,
                                     size_t p,
                                     struct PalmrtDataset **out);

/**
 * Releases a dataset. NULL is ignored.
 *
 * # Safety
 * `data` must come from `palmrt_dataset_new` and not be used afterwards.
 */
void palmrt_dataset_free(struct PalmrtDataset *data);

/**
 * Number of rows in a dataset, or 0 for NULL.
 *
 * # Safety
 * `data` must be NULL or a live handle.
 */
size_t palmrt_dataset_rows(const struct PalmrtDataset *data);

/**
 * Location test with `b` random permutations. `method` is a
 * `PalmrtMethod` value. With `half_ties` nonzero, exact ties count one
 * half instead of one.
 *
 * # Safety
 * `data` must be a live handle and `out` writable.
 */
enum PalmrtStatus palmrt_test(const struct PalmrtDataset *data,
                              uint32_t method,
                              size_t b,
                              uint64_t seed,
                              int32_t half_ties,
                              struct PalmrtResult *out);

/**
 * Dispersion test for a 0/1 group column in `x`, comparing the spread
 * between conditional quantiles `q_low` and `q_high`.
 *
 * # Safety
 * `data` must be a live handle and `out` writable.
 */
enum PalmrtStatus palmrt_dispersion_test(const struct PalmrtDataset *data,
                                         double q_low,
                                         double q_high,
                                         size_t b,
                                         uint64_t seed,
                                         struct PalmrtResult *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ROBUST_PALMRT_H */
