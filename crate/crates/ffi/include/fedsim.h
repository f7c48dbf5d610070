/* C interface to the fedsim federated-learning simulator. */

#ifndef FEDSIM_H
#define FEDSIM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every API call.
typedef enum FedsimStatus {
  // The call succeeded.
  FEDSIM_STATUS_OK = 0,
  // A required pointer argument was null.
  FEDSIM_STATUS_NULL_POINTER = 1,
  // The config text was not valid UTF-8, not valid TOML, or failed
  // validation; the error message names the offending field.
  FEDSIM_STATUS_INVALID_CONFIG = 2,
  // The simulation itself failed (for example a client diverged), or the
  // call is not valid in the current state.
  FEDSIM_STATUS_RUNTIME_ERROR = 3,
  // A caller-supplied buffer length does not match the required length.
  FEDSIM_STATUS_BUFFER_SIZE_MISMATCH = 4,
  // An internal panic was caught at the boundary.
  FEDSIM_STATUS_PANIC = 5,
} FedsimStatus;

// Opaque simulation handle. Create with `fedsim_simulation_new`, destroy
// with `fedsim_simulation_free`. Not thread-safe: drive each handle from
// one thread at a time.
typedef struct FedsimSimulation FedsimSimulation;

// Scalar metrics of one completed round.
typedef struct FedsimRoundMetrics {
  // Zero-based round index.
  uint64_t round;
  // Global-model loss on the held-out test split.
  double test_loss;
  // Test accuracy; NaN for objectives without one.
  double test_accuracy;
  // Fraction of sampled-client gradient pairs in conflict.
  double conflict_ratio;
  // Smallest pairwise gradient cosine similarity.
  double min_similarity;
  // Number of projections applied by harmonization.
  uint64_t projections_applied;
} FedsimRoundMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent non-OK status on this thread, or null if the
// last call succeeded. The pointer stays valid until the next API call on
// the same thread.
const char *fedsim_last_error_message(void);

// Builds a simulation for one strategy of the config and one seed, writing
// the handle to `out`. The seed is explicit rather than taken from the
// config's seed list so embedders can schedule seeds themselves.
//
// # Safety
// `config_text` must be a valid NUL-terminated string; `out` must point to
// writable memory for one pointer. On success `*out` owns the simulation
// and must be released with `fedsim_simulation_free`.
enum FedsimStatus fedsim_simulation_new(const char *config_text,
                                        size_t strategy_index,
                                        uint64_t seed,
                                        struct FedsimSimulation **out);

// Releases a handle. Null is a no-op.
//
// # Safety
// `sim` must be a pointer returned by `fedsim_simulation_new` that has
// not already been freed.
void fedsim_simulation_free(struct FedsimSimulation *sim);

// Runs one communication round.
//
// # Safety
// `sim` must be a live handle from `fedsim_simulation_new`.
enum FedsimStatus fedsim_simulation_run_round(struct FedsimSimulation *sim);

// Runs all remaining rounds up to the strategy's planned count.
//
// # Safety
// `sim` must be a live handle from `fedsim_simulation_new`.
enum FedsimStatus fedsim_simulation_run_all(struct FedsimSimulation *sim);

// Writes the number of completed rounds to `out`.
//
// # Safety
// `sim` must be a live handle; `out` must point to writable memory.
enum FedsimStatus fedsim_simulation_rounds_completed(struct FedsimSimulation *sim, size_t *out);

// Writes the length of the flat global parameter vector to `out`.
//
// # Safety
// `sim` must be a live handle; `out` must point to writable memory.
enum FedsimStatus fedsim_simulation_param_count(struct FedsimSimulation *sim, size_t *out);

// Copies the current global parameters into `buffer`. `len` must equal the
// value reported by `fedsim_simulation_param_count`.
//
// # Safety
// `sim` must be a live handle; `buffer` must point to `len` writable
// doubles.
enum FedsimStatus fedsim_simulation_global_params(struct FedsimSimulation *sim,
                                                  double *buffer,
                                                  size_t len);

// Writes the metrics of the most recently completed round to `out`.
// Fails with `FedsimStatus::RuntimeError` before the first round.
//
// # Safety
// `sim` must be a live handle; `out` must point to writable memory for one
// `FedsimRoundMetrics`.
enum FedsimStatus fedsim_simulation_last_round_metrics(struct FedsimSimulation *sim,
                                                       struct FedsimRoundMetrics *out);

// Runs the full experiment described by the config text, exactly like the
// CLI `run` subcommand: every (strategy, seed) cell, metrics written under
// `out_dir` (or the config's `output_dir` when null). Returns OK if at
// least one cell completed; `FedsimStatus::RuntimeError` if every cell
// failed.
//
// # Safety
// `config_text` must be a valid NUL-terminated string; `out_dir` must be a
// valid NUL-terminated string or null.
enum FedsimStatus fedsim_run_experiment(const char *config_text, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDSIM_H */
