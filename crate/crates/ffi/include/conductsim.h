#ifndef CONDUCTSIM_H
#define CONDUCTSIM_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CsStatus {
  CS_STATUS_OK = 0,
  CS_STATUS_NULL_POINTER = 1,
  CS_STATUS_INVALID_ARGUMENT = 2,
  CS_STATUS_VALIDATION = 3,
  CS_STATUS_NUMERICAL = 4,
  CS_STATUS_IO = 5,
  CS_STATUS_PANIC = 6,
} CsStatus;

/**
 * A solved price equilibrium.
 */
typedef struct CsEquilibrium CsEquilibrium;

/**
 * One market: prices, demand primitives and seller labels.
 */
typedef struct CsMarket CsMarket;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Builds a market handle.
 *
 * `nests` are 1-based group labels, `firms` integer seller ids, and
 * `airbnb` / `smart_pricing` 0/1 flags; every array has `n` entries. The
 * handle is written to `out` and must be released with `cs_market_free`.
 *
 * # Safety
 * All pointers must be valid for `n` reads; `out` must be writable.
 */
enum CsStatus cs_market_new(size_t n,
                            const double *prices,
                            const double *delta,
                            const uint32_t *nests,
                            const uint32_t *firms,
                            const uint8_t *airbnb,
                            const uint8_t *smart_pricing,
                            double alpha,
                            double sigma,
                            double rho,
                            size_t n_draws,
                            uint64_t seed,
                            double market_size,
                            struct CsMarket **out);

/**
 * # Safety
 * `m` must come from `cs_market_new` and not be used afterwards.
 */
void cs_market_free(struct CsMarket *m);

/**
 * Number of products in the market, or 0 for a null handle.
 *
 * # Safety
 * `m` must be null or a live market handle.
 */
size_t cs_market_len(const struct CsMarket *m);

/**
 * Writes the `n` market shares.
 *
 * # Safety
 * `m` must be a live handle and `out` valid for `len` writes.
 */
enum CsStatus cs_market_shares(const struct CsMarket *m, double *out, size_t len);

/**
 * Writes the demand Jacobian `dq_j / dp_k` in row-major order (`n * n`).
 *
 * # Safety
 * `m` must be a live handle and `out` valid for `len` writes.
 */
enum CsStatus cs_market_jacobian(const struct CsMarket *m, double *out, size_t len);

/**
 * Consumer surplus of the whole market in price units.
 *
 * # Safety
 * `m` must be a live handle and `out` writable.
 */
enum CsStatus cs_market_consumer_surplus(const struct CsMarket *m, double *out);

/**
 * Marginal costs implied by baseline first-order conditions at the
 * market's prices; smart-pricing listings get zero.
 *
 * # Safety
 * `m` must be a live handle and `out` valid for `len` writes.
 */
enum CsStatus cs_market_recover_costs(const struct CsMarket *m, double *out, size_t len);

/**
 * Solves prices given marginal costs. `self_preferencing` selects the
 * conduct: 0 for the baseline, nonzero for commission-maximizing smart
 * pricing.
 *
 * # Safety
 * `m` must be a live handle, `mc` valid for `n` reads and `out` writable.
 */
enum CsStatus cs_market_solve(const struct CsMarket *m,
                              const double *mc,
                              size_t n,
                              uint8_t self_preferencing,
                              struct CsEquilibrium **out);

/**
 * # Safety
 * `e` must come from `cs_market_solve` and not be used afterwards.
 */
void cs_equilibrium_free(struct CsEquilibrium *e);

/**
 * # Safety
 * `e` must be a live handle and `out` valid for `len` writes.
 */
enum CsStatus cs_equilibrium_prices(const struct CsEquilibrium *e, double *out, size_t len);

/**
 * # Safety
 * `e` must be a live handle and `out` valid for `len` writes.
 */
enum CsStatus cs_equilibrium_quantities(const struct CsEquilibrium *e, double *out, size_t len);

/**
 * Platform commission revenue at the equilibrium, or NaN for a null handle.
 *
 * # Safety
 * `e` must be null or a live handle.
 */
double cs_equilibrium_commission(const struct CsEquilibrium *e);

/**
 * First-order residual of the equilibrium, or NaN for a null handle.
 *
 * # Safety
 * `e` must be null or a live handle.
 */
double cs_equilibrium_residual(const struct CsEquilibrium *e);

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next call on the same thread.
 */
const char *cs_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cs_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONDUCTSIM_H */
