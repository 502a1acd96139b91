#ifndef LISTWISE_H
#define LISTWISE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum LwStatus {
  LW_STATUS_OK = 0,
  LW_STATUS_NULL_ARGUMENT = 1,
  LW_STATUS_INVALID_UTF8 = 2,
  // Malformed input: bad JSON, unknown ids, shape errors.
  LW_STATUS_INVALID_INPUT = 3,
  LW_STATUS_INVALID_CONFIG = 4,
  LW_STATUS_NUMERICAL = 5,
  LW_STATUS_JUDGE = 6,
  LW_STATUS_IO = 7,
  // The output buffer is shorter than the result.
  LW_STATUS_BUFFER_TOO_SMALL = 8,
  LW_STATUS_PANIC = 9,
} LwStatus;

// A candidate pool.
typedef struct LwPool LwPool;

// The artifacts of a finished tournament, together with its pool.
typedef struct LwRun LwRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until
// the next call into the library from the same thread.
const char *lw_last_error(void);

// Library version as a static string.
const char *lw_version(void);

// # Safety
// `s` must be null or a string returned by this library, not yet freed.
void lw_string_free(char *s);

// Parses a pool from its JSON form.
//
// # Safety
// `json` must be a nul-terminated string; `out` must be writable.
enum LwStatus lw_pool_from_json(const char *json, struct LwPool **out);

// A synthetic pool of `n` candidates with utilities drawn from `generator`
// (`normal:sd=1`, `uniform:lo,hi`, `tiered:tiers=3,gap=2`).
//
// # Safety
// `generator` must be a nul-terminated string; `out` must be writable.
enum LwStatus lw_pool_synthetic(size_t n,
                                const char *generator,
                                uint64_t seed,
                                struct LwPool **out);

// Number of candidates, or 0 for a null handle.
//
// # Safety
// `pool` must be null or a live pool handle.
size_t lw_pool_len(const struct LwPool *pool);

// Canonical JSON of the pool; release with [`lw_string_free`].
//
// # Safety
// `pool` must be a live pool handle; `out` must be writable.
enum LwStatus lw_pool_to_json(const struct LwPool *pool, char **out);

// # Safety
// `pool` must be null or a pool handle not yet freed.
void lw_pool_free(struct LwPool *pool);

// Runs a tournament against a simulated judge. `config_json` is a
// configuration object; omitted fields take their defaults and a missing
// `n_candidates` is taken from the pool. When the pool carries true
// utilities the run is scored against the true order.
//
// # Safety
// `pool` must be a live pool handle, `config_json` a nul-terminated
// string and `out` writable.
enum LwStatus lw_simulate(const struct LwPool *pool, const char *config_json, struct LwRun **out);

// Number of completed iterations, or 0 for a null handle.
//
// # Safety
// `run` must be null or a live run handle.
size_t lw_run_iterations(const struct LwRun *run);

// Copies the final utilities into `out[0..n]`.
//
// # Safety
// `run` must be a live run handle; `out` must hold `capacity` doubles.
enum LwStatus lw_run_utilities(const struct LwRun *run, double *out, size_t capacity);

// Copies the final Laplace variances into `out[0..n]`.
//
// # Safety
// As for [`lw_run_utilities`].
enum LwStatus lw_run_variances(const struct LwRun *run, double *out, size_t capacity);

// The per-iteration metrics as CSV; release with [`lw_string_free`].
//
// # Safety
// `run` must be a live run handle; `out` must be writable.
enum LwStatus lw_run_metrics_csv(const struct LwRun *run, char **out);

// Writes a complete run directory at `dir`.
//
// # Safety
// `run` must be a live run handle; `dir` a nul-terminated path.
enum LwStatus lw_run_write_dir(const struct LwRun *run, const char *dir);

// # Safety
// `run` must be null or a run handle not yet freed.
void lw_run_free(struct LwRun *run);

// Plackett-Luce log-likelihood of one ranking of item indices under `u`.
//
// # Safety
// `u` must hold `n` doubles, `ranking` `k` indices; `out` must be writable.
enum LwStatus lw_log_likelihood(const double *u,
                                size_t n,
                                const size_t *ranking,
                                size_t k,
                                double *out);

// Fits utilities and Laplace variances for `n` items to `count` rankings.
// Ranking `i` occupies the next `lengths[i]` entries of `indices`.
// `out_u` and `out_sigma2` must each hold `n` doubles.
//
// # Safety
// All pointers must be valid for the lengths described above.
enum LwStatus lw_fit(size_t n,
                     const size_t *indices,
                     const size_t *lengths,
                     size_t count,
                     double lambda,
                     double *out_u,
                     double *out_sigma2);

// Kendall tau-a between two orderings of the same `n` items.
//
// # Safety
// `r1` and `r2` must hold `n` indices; `out` must be writable.
enum LwStatus lw_kendall_tau(const size_t *r1, const size_t *r2, size_t n, double *out);

// NDCG of `predicted` against `reference` at depth `ceil(p * n)`.
//
// # Safety
// `predicted` and `reference` must hold `n` indices; `out` must be writable.
enum LwStatus lw_ndcg_at(const size_t *predicted,
                         const size_t *reference,
                         size_t n,
                         double p,
                         double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LISTWISE_H */
