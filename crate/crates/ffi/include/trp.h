#ifndef TRP_H
#define TRP_H

#pragma once

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TrpVariant {
  TRP_VARIANT_MST_ROOTED = 0,
  TRP_VARIANT_SECTOR_ANCHORED = 1,
} TrpVariant;

typedef enum TrpRootMode {
  TRP_ROOT_MODE_HUB = 0,
  TRP_ROOT_MODE_MAX_MAGNITUDE = 1,
  /**
   * Root at panel index `root_index`.
   */
  TRP_ROOT_MODE_FIXED_INDEX = 2,
} TrpRootMode;

typedef enum TrpStatus {
  TRP_STATUS_OK = 0,
  TRP_STATUS_NULL_POINTER = 1,
  TRP_STATUS_INVALID_ARGUMENT = 2,
  TRP_STATUS_IO = 3,
  TRP_STATUS_PARSE = 4,
  TRP_STATUS_INVALID_CONFIG = 5,
  TRP_STATUS_BUFFER_TOO_SMALL = 6,
  TRP_STATUS_PANIC = 99,
} TrpStatus;

typedef enum TrpDiagnostic {
  TRP_DIAGNOSTIC_NONE = 0,
  TRP_DIAGNOSTIC_EMPTY_ACTIVE_SET = 1,
  TRP_DIAGNOSTIC_DEGENERATE_SIGNAL = 2,
  TRP_DIAGNOSTIC_ALL_WEIGHTS_PRUNED = 3,
} TrpDiagnostic;

/**
 * Opaque allocation result.
 */
typedef struct TrpAllocation TrpAllocation;

/**
 * Opaque returns panel.
 */
typedef struct TrpPanel TrpPanel;

/**
 * Allocation settings. `lookback == 0` means the full history; `cap` and
 * `min_weight` apply only when their `has_*` flag is set.
 */
typedef struct TrpConfigC {
  enum TrpVariant variant;
  size_t lookback;
  double magnitude_threshold;
  double signal_threshold;
  double rho;
  double leverage;
  enum TrpRootMode root_mode;
  size_t root_index;
  bool has_cap;
  double cap;
  bool has_min_weight;
  double min_weight;
  double subtree_exponent;
  bool renormalize;
  bool neutralize;
  bool postprocess_mst;
} TrpConfigC;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread. Valid until the next call
 * into this library from the same thread.
 */
const char *trp_last_error_message(void);

const char *trp_version(void);

/**
 * Propagation coefficient for a node with `b` children.
 */
double trp_alpha(size_t b, double rho);

struct TrpConfigC trp_config_default(void);

/**
 * Builds a panel from `n_assets` NUL-terminated tickers and a row-major
 * `n_assets * n_periods` array of returns.
 */
enum TrpStatus trp_panel_new(const char *const *tickers,
                             size_t n_assets,
                             const double *returns,
                             size_t n_periods,
                             struct TrpPanel **out);

/**
 * Loads a wide returns CSV: a header row of tickers, then one row per period.
 */
enum TrpStatus trp_panel_load_csv(const char *path, struct TrpPanel **out);

size_t trp_panel_n_assets(const struct TrpPanel *panel);

size_t trp_panel_n_periods(const struct TrpPanel *panel);

void trp_panel_free(struct TrpPanel *panel);

/**
 * Allocates over `panel` with one signal per asset, in panel order. A zero
 * portfolio is a successful result; inspect it with
 * [`trp_allocation_diagnostic`].
 */
enum TrpStatus trp_allocate(const struct TrpPanel *panel,
                            const double *signals,
                            size_t n_signals,
                            const struct TrpConfigC *config,
                            struct TrpAllocation **out);

size_t trp_allocation_n_assets(const struct TrpAllocation *alloc);

/**
 * Copies the final weights, one per panel asset, into `out`.
 */
enum TrpStatus trp_allocation_weights(const struct TrpAllocation *alloc, double *out, size_t len);

/**
 * Copies propagation factors into `out`; NaN for assets outside the active set.
 */
enum TrpStatus trp_allocation_g_factors(const struct TrpAllocation *alloc, double *out, size_t len);

/**
 * The first diagnostic raised, or `None`.
 */
enum TrpDiagnostic trp_allocation_diagnostic(const struct TrpAllocation *alloc);

/**
 * Topology digest, or null when no topology was built. Owned by the allocation.
 */
const char *trp_allocation_topology_hash(const struct TrpAllocation *alloc);

void trp_allocation_free(struct TrpAllocation *alloc);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRP_H */
