#ifndef CASCA_H
#define CASCA_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CascaStatus {
  CASCA_STATUS_OK = 0,
  /**
   * A required pointer was null.
   */
  CASCA_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not UTF-8.
   */
  CASCA_STATUS_INVALID_UTF8 = 2,
  /**
   * An argument was rejected; see the last error.
   */
  CASCA_STATUS_INVALID_ARGUMENT = 3,
  /**
   * The requested key has no data.
   */
  CASCA_STATUS_NOT_FOUND = 4,
  /**
   * The query matched no points; the out value is untouched.
   */
  CASCA_STATUS_EMPTY = 5,
  CASCA_STATUS_IO = 6,
  /**
   * A Rust panic was caught at the boundary.
   */
  CASCA_STATUS_INTERNAL = 7,
} CascaStatus;

typedef struct CascaEmma CascaEmma;

typedef struct CascaPattern CascaPattern;

typedef struct CascaStore CascaStore;

/**
 * One greedy step. `intensity` is only read when `is_carbon` is set.
 */
typedef struct CascaGdsStep {
  double s;
  double s_min;
  double s_max;
  double p;
  double p_min;
  double p_max;
  /**
   * +1 or -1.
   */
  int32_t lambda;
  double delta;
  bool is_carbon;
  double intensity;
} CascaGdsStep;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *casca_last_error(void);

/**
 * Emissions in mg CO2eq per minute for `power_w` watts at `intensity`
 * gCO2eq/kWh.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum CascaStatus casca_carbon_footprint(double power_w, double intensity, double *out);

/**
 * 1 when `x` is in `[a, b]`, `-2c` otherwise.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum CascaStatus casca_in(double x, double a, double b, double c, double *out);

/**
 * Reward of a next state with `n` SLOs given as parallel arrays.
 *
 * # Safety
 * `values`, `mins` and `maxs` must each hold `n` readable doubles and `out`
 * must be valid for writes.
 */
enum CascaStatus casca_reward(const double *values,
                              const double *mins,
                              const double *maxs,
                              size_t n,
                              double carbon,
                              double *out);

/**
 * # Safety
 * `step` must point to a valid struct and `out` must be valid for writes.
 */
enum CascaStatus casca_gds_decide(const struct CascaGdsStep *step, double *out);

/**
 * # Safety
 * `pattern` is a nul-terminated string; `out` must be valid for writes.
 */
enum CascaStatus casca_pattern_new(const char *pattern, struct CascaPattern **out);

/**
 * # Safety
 * `pattern` comes from [`casca_pattern_new`]; `topic` is a nul-terminated
 * string; `out` must be valid for writes.
 */
enum CascaStatus casca_pattern_matches(const struct CascaPattern *pattern,
                                       const char *topic,
                                       bool *out);

/**
 * # Safety
 * `pattern` is null or comes from [`casca_pattern_new`] and is not used
 * afterwards.
 */
void casca_pattern_free(struct CascaPattern *pattern);

/**
 * # Safety
 * `out` must be valid for writes.
 */
enum CascaStatus casca_store_new(struct CascaStore **out);

/**
 * Writes one point given in its JSON wire form
 * (`{"m": ..., "tg": {...}, "f": {...}, "ts": ...}`).
 *
 * # Safety
 * `store` comes from [`casca_store_new`]; `point_json` is a nul-terminated
 * string.
 */
enum CascaStatus casca_store_write(const struct CascaStore *store, const char *point_json);

/**
 * Evaluates a query such as `mean(fps.value, 60s)` at `now_ms`. Returns
 * [`CascaStatus::Empty`] when the window holds no matching points.
 *
 * # Safety
 * `store` comes from [`casca_store_new`]; `query` is a nul-terminated
 * string; `out` must be valid for writes.
 */
enum CascaStatus casca_store_query(const struct CascaStore *store,
                                   const char *query,
                                   int64_t now_ms,
                                   double *out);

/**
 * Number of stored points, 0 for a null handle.
 *
 * # Safety
 * `store` is null or comes from [`casca_store_new`].
 */
size_t casca_store_len(const struct CascaStore *store);

/**
 * # Safety
 * `store` is null or comes from [`casca_store_new`] and is not used
 * afterwards.
 */
void casca_store_free(struct CascaStore *store);

/**
 * Loads the source table and location dataset CSV files.
 *
 * # Safety
 * Both paths are nul-terminated strings; `out` must be valid for writes.
 */
enum CascaStatus casca_emma_load(const char *sources_csv,
                                 const char *locations_csv,
                                 struct CascaEmma **out);

/**
 * Intensity of the latest record at or before `ts_ms`; `granularity` is
 * `hourly`, `daily`, `monthly` or `yearly`.
 *
 * # Safety
 * `emma` comes from [`casca_emma_load`]; strings are nul-terminated; `out`
 * must be valid for writes.
 */
enum CascaStatus casca_emma_location_intensity(const struct CascaEmma *emma,
                                               const char *country,
                                               int64_t ts_ms,
                                               const char *granularity,
                                               double *out);

/**
 * Lifecycle intensity of one energy source, e.g. `wind`.
 *
 * # Safety
 * `emma` comes from [`casca_emma_load`]; `source` is nul-terminated; `out`
 * must be valid for writes.
 */
enum CascaStatus casca_emma_source_intensity(const struct CascaEmma *emma,
                                             const char *source,
                                             double *out);

/**
 * # Safety
 * `emma` is null or comes from [`casca_emma_load`] and is not used
 * afterwards.
 */
void casca_emma_free(struct CascaEmma *emma);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CASCA_H */
