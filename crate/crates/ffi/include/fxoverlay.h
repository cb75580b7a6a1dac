#ifndef FXOVERLAY_H
#define FXOVERLAY_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum FxoError {
  FXO_ERROR_OK = 0,
  FXO_ERROR_NULL_POINTER = 1,
  FXO_ERROR_INVALID_UTF8 = 2,
  FXO_ERROR_IO = 3,
  FXO_ERROR_PARSE = 4,
  FXO_ERROR_CONFIG = 5,
  FXO_ERROR_DOMAIN = 6,
  FXO_ERROR_SOLVER = 7,
  // The caller's buffer is too small; nothing was written.
  FXO_ERROR_BUFFER_TOO_SMALL = 8,
  // The solution holds no portfolio (for example the target was infeasible).
  FXO_ERROR_NO_SOLUTION = 9,
  FXO_ERROR_PANIC = 10,
} FxoError;

typedef enum FxoPolicy {
  FXO_POLICY_UNRESTRICTED = 0,
  FXO_POLICY_FULLY_HEDGED = 1,
  FXO_POLICY_FOREIGN_ONLY = 2,
} FxoPolicy;

typedef enum FxoMode {
  FXO_MODE_UNIFIED = 0,
  FXO_MODE_TWO_STAGE = 1,
} FxoMode;

// Outcome of a solve.
typedef enum FxoStatus {
  FXO_STATUS_OPTIMAL = 0,
  FXO_STATUS_INFEASIBLE = 1,
  FXO_STATUS_NODE_LIMIT = 2,
  FXO_STATUS_NUMERICAL_FAILURE = 3,
} FxoStatus;

typedef struct FxoFrontier FxoFrontier;

// Adjusted moments plus the spread table of a dataset.
typedef struct FxoModel FxoModel;

typedef struct FxoSolution FxoSolution;

typedef struct FxoSpec FxoSpec;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty after a success.
// The pointer stays valid until the next library call on the same thread.
const char *fxo_last_error(void);

// Library version as a static NUL-terminated string.
const char *fxo_version(void);

// Releases a string returned by this library.
//
// # Safety
// `s` must come from this library and not have been freed already.
void fxo_string_free(char *s);

// Loads a dataset. Any path may be null: a null `data` selects the bundled
// four-country fixture, a null `schema` the fixture layout and a null
// `spreads` the bundled spreads (fixture) or zero spreads (own data).
//
// # Safety
// Non-null paths must be NUL-terminated strings; `out` must be writable.
enum FxoError fxo_model_load(const char *data,
                             const char *schema,
                             const char *spreads,
                             struct FxoModel **out);

// # Safety
// `model` must be null or a live handle from `fxo_model_load`.
void fxo_model_free(struct FxoModel *model);

// Number of countries, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t fxo_model_num_countries(const struct FxoModel *model);

// Number of asset classes, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t fxo_model_num_classes(const struct FxoModel *model);

// Default parameters for `model`, then the overrides in `json` (model
// units, may be null).
//
// # Safety
// `model` must be a live handle, `json` null or NUL-terminated, `out` writable.
enum FxoError fxo_spec_new(const struct FxoModel *model, const char *json, struct FxoSpec **out);

// # Safety
// `spec` must be null or a live handle.
void fxo_spec_free(struct FxoSpec *spec);

// Sets the target monthly return (decimal).
//
// # Safety
// `spec` must be a live handle.
enum FxoError fxo_spec_set_mu(struct FxoSpec *spec, double mu);

// Sets the total overlay limit (fraction).
//
// # Safety
// `spec` must be a live handle.
enum FxoError fxo_spec_set_overlay_limit(struct FxoSpec *spec, double v_u);

// Sets the maximum number of active contracts.
//
// # Safety
// `spec` must be a live handle.
enum FxoError fxo_spec_set_cardinality(struct FxoSpec *spec, size_t g);

// Sets the margin requirement (fraction of gross forward volume).
//
// # Safety
// `spec` must be a live handle.
enum FxoError fxo_spec_set_margin(struct FxoSpec *spec, double margin);

// # Safety
// `spec` must be a live handle.
enum FxoError fxo_spec_set_policy(struct FxoSpec *spec, enum FxoPolicy policy);

// # Safety
// `spec` must be a live handle.
enum FxoError fxo_spec_set_mode(struct FxoSpec *spec, enum FxoMode mode);

// Effective parameters as JSON; release with `fxo_string_free`.
//
// # Safety
// `spec` must be a live handle.
char *fxo_spec_to_json(const struct FxoSpec *spec);

// Solves one portfolio. Success means the solver ran; the outcome is read
// with `fxo_solution_status`.
//
// # Safety
// `model` and `spec` must be live handles, `out` writable.
enum FxoError fxo_solve(const struct FxoModel *model,
                        const struct FxoSpec *spec,
                        struct FxoSolution **out);

// # Safety
// `sol` must be null or a live handle.
void fxo_solution_free(struct FxoSolution *sol);

// Solve outcome; a null handle reads as `NumericalFailure`.
//
// # Safety
// `sol` must be null or a live handle.
enum FxoStatus fxo_solution_status(const struct FxoSolution *sol);

// Branch-and-bound nodes explored and solve time in seconds.
//
// # Safety
// `sol` must be a live handle; the outputs must be writable.
enum FxoError fxo_solution_stats(const struct FxoSolution *sol, size_t *nodes, double *seconds);

// Monthly volatility, variance, and net return of the portfolio.
//
// # Safety
// `sol` must be a live handle; each output must be writable.
enum FxoError fxo_solution_risk_return(const struct FxoSolution *sol,
                                       double *volatility,
                                       double *variance,
                                       double *net_return);

// Asset weights, classes by countries in row-major order (`A·C` values).
//
// # Safety
// `buf` must hold `len` doubles.
enum FxoError fxo_solution_weights(const struct FxoSolution *sol, double *buf, size_t len);

// Overlay position per country (`C` values).
//
// # Safety
// `buf` must hold `len` doubles.
enum FxoError fxo_solution_overlay(const struct FxoSolution *sol, double *buf, size_t len);

// Currency exposure per country (`C` values).
//
// # Safety
// `buf` must hold `len` doubles.
enum FxoError fxo_solution_currency_exposure(const struct FxoSolution *sol,
                                             double *buf,
                                             size_t len);

// Signed forward contract sizes (`C(C−1)/2` values).
//
// # Safety
// `buf` must hold `len` doubles.
enum FxoError fxo_solution_contracts(const struct FxoSolution *sol, double *buf, size_t len);

// Margin cash held.
//
// # Safety
// `sol` must be a live handle and `cash` writable.
enum FxoError fxo_solution_cash(const struct FxoSolution *sol, double *cash);

// Full decoded portfolio as JSON, or null without one; release with
// `fxo_string_free`.
//
// # Safety
// `sol` must be null or a live handle.
char *fxo_solution_to_json(const struct FxoSolution *sol);

// Sweeps the inclusive target grid `lo, lo+step, …, ≤ hi` (decimals).
// `jobs` = 0 uses every core.
//
// # Safety
// `model` and `spec` must be live handles, `out` writable.
enum FxoError fxo_frontier(const struct FxoModel *model,
                           const struct FxoSpec *spec,
                           double lo,
                           double hi,
                           double step,
                           size_t jobs,
                           struct FxoFrontier **out);

// # Safety
// `f` must be null or a live handle.
void fxo_frontier_free(struct FxoFrontier *f);

// Number of grid points, or 0 for a null handle.
//
// # Safety
// `f` must be null or a live handle.
size_t fxo_frontier_len(const struct FxoFrontier *f);

// Target, status and volatility of point `index`; the volatility is NaN
// unless the point is optimal.
//
// # Safety
// `f` must be a live handle; outputs must be writable.
enum FxoError fxo_frontier_point(const struct FxoFrontier *f,
                                 size_t index,
                                 double *mu,
                                 enum FxoStatus *status,
                                 double *volatility);

// Frontier in the CLI's CSV layout; release with `fxo_string_free`.
//
// # Safety
// `f` must be null or a live handle.
char *fxo_frontier_to_csv(const struct FxoFrontier *f);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FXOVERLAY_H */
