#ifndef OPUS_H
#define OPUS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OpusPolicy {
  OPUS_POLICY_ON_DEMAND = 0,
  OPUS_POLICY_PROVISIONING = 1,
} OpusPolicy;

// Status codes. The nonzero values match the command-line exit codes.
typedef enum OpusStatus {
  OPUS_STATUS_OK = 0,
  OPUS_STATUS_NULL_ARGUMENT = 1,
  OPUS_STATUS_CONFIG = 2,
  OPUS_STATUS_INFEASIBLE = 3,
  OPUS_STATUS_IO = 4,
  OPUS_STATUS_PANIC = 5,
} OpusStatus;

// Opaque scenario handle.
typedef struct OpusScenario OpusScenario;

// Opaque simulation result handle.
typedef struct OpusSimResult OpusSimResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null if none. The
// pointer stays valid until the next failing call on the same thread.
const char *opus_last_error_message(void);

// Loads a scenario file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum OpusStatus opus_scenario_load(const char *path, struct OpusScenario **out);

// Parses scenario text.
//
// # Safety
// `text` must be a NUL-terminated string and `out` a valid pointer.
enum OpusStatus opus_scenario_from_toml(const char *text, struct OpusScenario **out);

// # Safety
// `scenario` must come from this library and not be used afterwards.
void opus_scenario_free(struct OpusScenario *scenario);

// Simulates one iteration of the scenario. A negative `delay_s` keeps the
// scenario's own reconfiguration delay.
//
// # Safety
// `scenario` must be a live handle and `out` a valid pointer.
enum OpusStatus opus_simulate(const struct OpusScenario *scenario,
                              enum OpusPolicy policy,
                              double delay_s,
                              struct OpusSimResult **out);

// # Safety
// `result` must come from this library and not be used afterwards.
void opus_result_free(struct OpusSimResult *result);

// Iteration time in seconds; NaN for a null handle.
//
// # Safety
// `result` must be null or a live handle.
double opus_result_makespan(const struct OpusSimResult *result);

// Iteration time on electrical rails; NaN for a null handle.
//
// # Safety
// `result` must be null or a live handle.
double opus_result_baseline_makespan(const struct OpusSimResult *result);

// Makespan divided by the electrical baseline; NaN for a null handle.
//
// # Safety
// `result` must be null or a live handle.
double opus_result_overhead(const struct OpusSimResult *result);

// Number of circuit reconfigurations; 0 for a null handle.
//
// # Safety
// `result` must be null or a live handle.
uintptr_t opus_result_reconfig_count(const struct OpusSimResult *result);

// GPUs one flat OCS rail fabric can host.
uint64_t opus_max_gpus(uint64_t scaleup_size, uint64_t radix);

// Upper bound on windows per rail for a pipeline-parallel iteration.
//
// # Safety
// `out` must be a valid pointer.
enum OpusStatus opus_eq1_bound(uint64_t pp,
                               uint64_t n_layer,
                               uint64_t n_microbatch,
                               bool has_cp,
                               bool has_ep,
                               uint64_t *out);

// Cost and power savings of OCS rails with the reference unit values at
// the reference scale, as fractions.
//
// # Safety
// `cost` and `power` must be valid pointers.
enum OpusStatus opus_reference_savings(double *cost, double *power);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OPUS_H */
