#ifndef CFRIS_H
#define CFRIS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Method codes accepted by [`cfris_run_trial`].
 */
#define CFRIS_METHOD_ARIS 0

#define CFRIS_METHOD_PRIS 1

#define CFRIS_METHOD_RND_ARIS 2

/**
 * Status codes returned by every fallible function.
 */
typedef enum CfrisStatus {
  CFRIS_STATUS_OK = 0,
  CFRIS_STATUS_NULL_POINTER = 1,
  CFRIS_STATUS_INVALID_ARGUMENT = 2,
  CFRIS_STATUS_INVALID_STATE = 3,
  CFRIS_STATUS_CONFIG = 4,
  CFRIS_STATUS_IO = 5,
  CFRIS_STATUS_PANIC = 6,
} CfrisStatus;

/**
 * Opaque configuration handle.
 */
typedef struct CfrisConfig CfrisConfig;

/**
 * Outcome of one trial, re-evaluated independently of the optimizer.
 */
typedef struct CfrisResult {
  double se_bps_hz;
  double ee_bps_hz_w;
  double objective;
  double p_sys_w;
  double max_residual;
  uint32_t outer_iters;
  /**
   * 1 if every constraint holds to 1e-6 relative, 0 otherwise.
   */
  uint8_t feasible;
} CfrisResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Full-scale default configuration. Never returns null.
 */
struct CfrisConfig *cfris_config_new_default(void);

/**
 * Small configuration for quick runs. Never returns null.
 */
struct CfrisConfig *cfris_config_new_desk(void);

/**
 * Parses a TOML configuration into `*out`.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CfrisStatus cfris_config_from_toml(const char *text, struct CfrisConfig **out);

/**
 * Sets one (possibly dotted) key, e.g. `"kappa"`, `"solver.max_outer"`.
 *
 * # Safety
 * `cfg` must come from a `cfris_config_*` constructor; `key` and `value`
 * must be NUL-terminated strings.
 */
enum CfrisStatus cfris_config_set(struct CfrisConfig *cfg, const char *key, const char *value);

/**
 * Serializes the configuration; release the string with
 * [`cfris_string_free`]. Returns null on error.
 *
 * # Safety
 * `cfg` must be a live handle or null.
 */
char *cfris_config_to_toml(const struct CfrisConfig *cfg);

/**
 * Releases a configuration handle. Null is ignored.
 *
 * # Safety
 * `cfg` must come from a `cfris_config_*` constructor and not be used again.
 */
void cfris_config_free(struct CfrisConfig *cfg);

/**
 * Runs one method (`CFRIS_METHOD_*`) on the channel draw of `seed`.
 *
 * # Safety
 * `cfg` must be a live handle and `out` a valid pointer.
 */
enum CfrisStatus cfris_run_trial(const struct CfrisConfig *cfg,
                                 uint32_t method,
                                 uint64_t seed,
                                 struct CfrisResult *out);

/**
 * Path loss amplitude at `freq_hz` over `dist_m`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum CfrisStatus cfris_path_loss(double freq_hz,
                                 double dist_m,
                                 double absorption_per_m,
                                 double *out);

/**
 * Power of one DAC (W).
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum CfrisStatus cfris_dac_power(double sampling_rate_hz, uint32_t bits, double *out);

/**
 * Quantization distortion factor of a `bits`-bit DAC.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum CfrisStatus cfris_distortion_factor(uint32_t bits, double *out);

/**
 * Message of the last failure on this thread, or null.
 */
const char *cfris_last_error_message(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used again.
 */
void cfris_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CFRIS_H */
