#ifndef ISOCG_H
#define ISOCG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IsocgStatus {
  ISOCG_STATUS_OK = 0,
  ISOCG_STATUS_NULL_POINTER = 1,
  ISOCG_STATUS_INVALID_ARGUMENT = 2,
  ISOCG_STATUS_IO = 3,
  ISOCG_STATUS_PARSE = 4,
  ISOCG_STATUS_UNKNOWN_MACHINE = 5,
  ISOCG_STATUS_NOT_FOUND = 6,
  ISOCG_STATUS_INFEASIBLE = 7,
  ISOCG_STATUS_NO_BREAK_EVEN = 8,
  ISOCG_STATUS_DIVERGED = 9,
  ISOCG_STATUS_PANIC = 10,
} IsocgStatus;

typedef enum IsocgProblemClass {
  ISOCG_PROBLEM_CLASS_ON_CHIP = 0,
  ISOCG_PROBLEM_CLASS_OFF_CHIP = 1,
} IsocgProblemClass;

typedef enum IsocgBitDomain {
  ISOCG_BIT_DOMAIN_SIGN = 0,
  ISOCG_BIT_DOMAIN_MANTISSA = 1,
  ISOCG_BIT_DOMAIN_SIGN_MANTISSA = 2,
  ISOCG_BIT_DOMAIN_EXPONENT = 3,
  ISOCG_BIT_DOMAIN_ANY = 4,
} IsocgBitDomain;

typedef enum IsocgIsoMode {
  ISOCG_ISO_MODE_PERFORMANCE = 0,
  ISOCG_ISO_MODE_POWER = 1,
  ISOCG_ISO_MODE_CAPACITY = 2,
} IsocgIsoMode;

typedef enum IsocgComposition {
  ISOCG_COMPOSITION_WORK_WEIGHTED = 0,
  ISOCG_COMPOSITION_TIME_WEIGHTED = 1,
} IsocgComposition;

/**
 * Opaque machine specs plus measured samples.
 */
typedef struct IsocgSampleSet IsocgSampleSet;

typedef struct IsocgOperatingPoint {
  double gflops;
  double watts;
} IsocgOperatingPoint;

/**
 * `rate == 0` disables injection. `max_events == 0` means no limit.
 */
typedef struct IsocgFaultConfig {
  double rate;
  uint32_t flips_per_event;
  enum IsocgBitDomain bit_domain;
  uint64_t seed;
  bool allow_non_finite;
  uint64_t max_events;
} IsocgFaultConfig;

/**
 * `max_iter == 0` selects the default of `50·n`.
 */
typedef struct IsocgSolveOptions {
  double tol;
  uintptr_t max_iter;
  uintptr_t ss_period;
  struct IsocgFaultConfig fault;
} IsocgSolveOptions;

typedef struct IsocgSolveResult {
  bool converged;
  uintptr_t iterations;
  uint64_t flops;
  uint64_t gemv_flops;
  uintptr_t corrections;
  uintptr_t fault_events;
  /**
   * Last residual seen by the iteration; NaN when no iteration ran.
   */
  double final_relative_residual;
  double true_relative_residual;
} IsocgSolveResult;

typedef struct IsocgHybrid {
  struct IsocgOperatingPoint reliable;
  struct IsocgOperatingPoint unreliable;
  double ss_fraction;
  enum IsocgComposition composition;
} IsocgHybrid;

typedef struct IsocgIsoResult {
  double cluster_count;
  double gflops;
  double watts;
} IsocgIsoResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (truncated,
 * always NUL-terminated when `len > 0`). Returns the full message length
 * plus one, so a caller can size a second attempt.
 */
uintptr_t isocg_last_error(char *buf, uintptr_t len);

/**
 * Static, NUL-terminated name of a status code.
 */
const char *isocg_status_name(enum IsocgStatus status);

/**
 * The bundled fixture. Free with `isocg_sampleset_free`.
 */
struct IsocgSampleSet *isocg_sampleset_bundled(void);

/**
 * Loads a sample CSV and its sibling `.toml` machine specs.
 */
enum IsocgStatus isocg_sampleset_load(const char *path, struct IsocgSampleSet **out);

enum IsocgStatus isocg_sampleset_save(const struct IsocgSampleSet *set, const char *path);

void isocg_sampleset_free(struct IsocgSampleSet *set);

uintptr_t isocg_sampleset_len(const struct IsocgSampleSet *set);

/**
 * Looks up one measured operating point.
 */
enum IsocgStatus isocg_sampleset_find(const struct IsocgSampleSet *set,
                                      const char *machine,
                                      uint32_t active_cores,
                                      double freq_ghz,
                                      enum IsocgProblemClass class_,
                                      struct IsocgOperatingPoint *out);

/**
 * Bandwidth-bound GFLOPS of `machine` at the given arithmetic intensity.
 */
enum IsocgStatus isocg_roofline_gflops(const struct IsocgSampleSet *set,
                                       const char *machine,
                                       double arithmetic_intensity,
                                       double *out);

uint64_t isocg_max_onchip_n(uint64_t llc_bytes);

/**
 * XORs the given bit positions (0 = least significant) into `value`.
 */
enum IsocgStatus isocg_flip_bits(double value,
                                 const uint8_t *positions,
                                 uintptr_t count,
                                 double *out);

struct IsocgSolveOptions isocg_solve_options_default(void);

/**
 * Plain CG from `x = 0`. Faults in `options` are injected into every gemv.
 * `options` may be null for defaults. A run that stops at the iteration cap
 * returns `ISOCG_STATUS_OK` with `converged == false`.
 */
enum IsocgStatus isocg_cg_solve(uintptr_t n,
                                const double *a,
                                const double *b,
                                const struct IsocgSolveOptions *options,
                                double *x_out,
                                struct IsocgSolveResult *result);

/**
 * Self-stabilizing CG: every `ss_period`-th iteration is reliable and
 * followed by a residual correction; faults hit the other gemvs.
 */
enum IsocgStatus isocg_sscg_solve(uintptr_t n,
                                  const double *a,
                                  const double *b,
                                  const struct IsocgSolveOptions *options,
                                  double *x_out,
                                  struct IsocgSolveResult *result);

/**
 * Unreliable cluster count matching `reference` in the chosen metric.
 * `reference_llc_bytes` and `unit_llc_bytes` are only read for capacity.
 */
enum IsocgStatus isocg_solve_hybrid(enum IsocgIsoMode mode,
                                    struct IsocgOperatingPoint reference,
                                    uint64_t reference_llc_bytes,
                                    const struct IsocgHybrid *hybrid,
                                    uint64_t unit_llc_bytes,
                                    struct IsocgIsoResult *out);

/**
 * Fractional slowdown of `hybrid` at which its energy-to-solution equals
 * that of `reference` (3.0 means 300 %).
 */
enum IsocgStatus isocg_breakeven_degradation(struct IsocgOperatingPoint reference,
                                             struct IsocgOperatingPoint hybrid,
                                             double *out);

/**
 * Joules to execute `flops` at the given rate and power.
 */
double isocg_ets(double flops, double gflops, double watts);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ISOCG_H */
