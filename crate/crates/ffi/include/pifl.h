/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef PIFL_H
#define PIFL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result of an FFI call.
typedef enum PiflStatus {
  PIFL_STATUS_OK = 0,
  // A required pointer was null or a string was not UTF-8.
  PIFL_STATUS_INVALID_ARGUMENT = 1,
  // The configuration failed to parse or validate.
  PIFL_STATUS_CONFIG_ERROR = 2,
  // The simulation or an output write failed.
  PIFL_STATUS_RUNTIME_ERROR = 3,
  // The call was made in the wrong state, such as reading a summary
  // before running.
  PIFL_STATUS_INVALID_STATE = 4,
  // An internal panic was caught.
  PIFL_STATUS_PANIC = 5,
} PiflStatus;

// Opaque simulation handle.
typedef struct PiflSimulation PiflSimulation;

typedef struct PiflEstimatorErrors {
  double local;
  double fl;
  double tier;
} PiflEstimatorErrors;

typedef struct PiflReimbursement {
  double delta_util;
  double theta;
} PiflReimbursement;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next FFI call on the same thread.
const char *pifl_last_error(void);

// Library version as a static string.
const char *pifl_version(void);

// Parses and validates a TOML configuration. On success `*out` receives a
// handle to release with [`pifl_sim_free`].
//
// # Safety
// `config_toml` must be a valid NUL-terminated string and `out` a valid
// pointer to writable storage.
enum PiflStatus pifl_sim_new(const char *config_toml, struct PiflSimulation **out);

// Runs the simulation. A run that stops early still keeps its partial
// output and reports `RuntimeError`.
//
// # Safety
// `sim` must be a handle from [`pifl_sim_new`].
enum PiflStatus pifl_sim_run(struct PiflSimulation *sim);

// Writes the run's trace files into `dir`.
//
// # Safety
// `sim` must be a handle from [`pifl_sim_new`]; `dir` a valid string.
enum PiflStatus pifl_sim_write(const struct PiflSimulation *sim, const char *dir);

// The run summary as JSON in `*out`, to release with [`pifl_string_free`].
//
// # Safety
// `sim` must be a handle from [`pifl_sim_new`]; `out` a valid pointer.
enum PiflStatus pifl_sim_summary_json(const struct PiflSimulation *sim, char **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `sim` must be null or a handle from [`pifl_sim_new`] not yet freed.
void pifl_sim_free(struct PiflSimulation *sim);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must be null or a string returned by this library not yet freed.
void pifl_string_free(char *s);

// Closed-form squared errors for client 0 of tier 1 in a two-tier
// population with equal sample sizes `n0`.
//
// # Safety
// `out` must be a valid pointer.
enum PiflStatus pifl_theory_closed_form(uintptr_t m1,
                                        uintptr_t m2,
                                        uintptr_t n0,
                                        double sigma2,
                                        double tau2,
                                        double beta_gap,
                                        struct PiflEstimatorErrors *out);

// Reimbursement utility and ratio for a tier whose accuracy moved from a
// best-so-far of `acc_prev_max` to `acc`.
//
// # Safety
// `out` must be a valid pointer.
enum PiflStatus pifl_reimbursement(double acc,
                                   double acc_prev_max,
                                   double eta,
                                   double gamma,
                                   struct PiflReimbursement *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PIFL_H */
