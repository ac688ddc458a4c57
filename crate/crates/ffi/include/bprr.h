#ifndef BPRR_H
#define BPRR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BprrStatus {
  BPRR_STATUS_OK = 0,
  // Null pointer or malformed UTF-8 argument.
  BPRR_STATUS_INVALID_ARGUMENT = 1,
  // The scenario or a request failed validation.
  BPRR_STATUS_VALIDATION = 2,
  // No feasible placement or route.
  BPRR_STATUS_INFEASIBLE = 3,
  // An enumeration budget was exceeded.
  BPRR_STATUS_BUDGET = 4,
  // I/O, serialization or an internal panic.
  BPRR_STATUS_INTERNAL = 5,
} BprrStatus;

// Opaque handle to a loaded scenario.
typedef struct BprrScenario BprrScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Parses a scenario document. On success `*out` owns a handle to free
// with [`bprr_scenario_free`].
//
// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum BprrStatus bprr_scenario_from_json(const char *json, struct BprrScenario **out);

// # Safety
// `scenario` must come from [`bprr_scenario_from_json`] or be null.
void bprr_scenario_free(struct BprrScenario *scenario);

// Placement of `policy` (null for the proposed policy) as JSON.
//
// # Safety
// Pointers must be valid; `policy` may be null.
enum BprrStatus bprr_place_json(const struct BprrScenario *scenario,
                                const char *policy,
                                char **out);

// Per-token upper bound, request-weighted lower bound and their ratio for
// the greedy placement sized for `target` concurrent requests (0 sizes it
// from the workload).
//
// # Safety
// Pointers must be valid.
enum BprrStatus bprr_bounds(const struct BprrScenario *scenario,
                            uint64_t target,
                            double *upper,
                            double *lower,
                            double *ratio);

// Monte Carlo simulation of the scenario workload under `policy` (null for
// the proposed policy); `runs` of 0 uses the scenario's run count.
//
// # Safety
// Pointers must be valid; `policy` may be null.
enum BprrStatus bprr_simulate_json(const struct BprrScenario *scenario,
                                   const char *policy,
                                   uint32_t runs,
                                   char **out);

// Decode per-token time of the route chosen for one request of `client`
// on the idle cluster.
//
// # Safety
// Pointers must be valid; `policy` may be null.
enum BprrStatus bprr_route_per_token(const struct BprrScenario *scenario,
                                     const char *policy,
                                     const char *client,
                                     uint32_t input_len,
                                     uint32_t output_len,
                                     double *per_token);

// # Safety
// `s` must come from this library or be null.
void bprr_string_free(char *s);

// Message of the last failed call on this thread; empty after a success.
// Valid until the next call on the same thread.
const char *bprr_last_error_message(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BPRR_H */
