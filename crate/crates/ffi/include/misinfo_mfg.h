#ifndef MISINFO_MFG_H
#define MISINFO_MFG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MfgStatus {
  MFG_OK = 0,
  MFG_NULL_POINTER = 1,
  MFG_INVALID_ARGUMENT = 2,
  MFG_INVALID_CONFIG = 3,
  MFG_PARSE_ERROR = 4,
  MFG_INTEGRATION_DIVERGED = 5,
  // The solve stopped at the iteration cap. The best iterate is still
  // returned through the output pointer.
  MFG_NOT_CONVERGED = 6,
  MFG_INVALID_POPULATION = 7,
  MFG_STEP_TOO_LARGE = 8,
  MFG_GRID_MISMATCH = 9,
  MFG_BUFFER_TOO_SMALL = 10,
  MFG_PANIC = 11,
  MFG_INTERNAL = 12,
} MfgStatus;

// The always-accept policy evaluated on a scenario.
typedef struct MfgBaseline MfgBaseline;

// Finite-population replicas together with the mean-field trajectory of
// the policy they were run under.
typedef struct MfgFiniteResult MfgFiniteResult;

// A validated scenario.
typedef struct MfgScenario MfgScenario;

// An equilibrium (or the best iterate of a non-converged solve).
typedef struct MfgSolution MfgSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the most recent failure on this thread, or null.
const char *mfg_last_error_message(void);

// Releases a string returned by this library.
//
// # Safety
// `s` must come from this library and not be freed twice.
void mfg_string_free(char *s);

// Builds the four-class reference scenario.
//
// # Safety
// `out` must be valid for writes.
enum MfgStatus mfg_scenario_reference(struct MfgScenario **out);

// Parses and validates a scenario from a NUL-terminated JSON document.
//
// # Safety
// `json` must be a valid C string and `out` valid for writes.
enum MfgStatus mfg_scenario_from_json(const char *json, struct MfgScenario **out);

// Serializes a scenario to JSON. Release the result with [`mfg_string_free`].
//
// # Safety
// `scenario` must be a live handle and `out` valid for writes.
enum MfgStatus mfg_scenario_to_json(const struct MfgScenario *scenario, char **out);

// Replaces the curing rate of every class and revalidates.
//
// # Safety
// `scenario` must be a live handle.
enum MfgStatus mfg_scenario_set_nu(struct MfgScenario *scenario, double nu);

// # Safety
// `scenario` must be a live handle and `out` valid for writes.
enum MfgStatus mfg_scenario_class_count(const struct MfgScenario *scenario, size_t *out);

// Number of time-grid points, the length of every per-time array.
//
// # Safety
// `scenario` must be a live handle and `out` valid for writes.
enum MfgStatus mfg_scenario_point_count(const struct MfgScenario *scenario, size_t *out);

// Degree of class `class`.
//
// # Safety
// `scenario` must be a live handle and `out` valid for writes.
enum MfgStatus mfg_scenario_class_degree(const struct MfgScenario *scenario,
                                         size_t class_,
                                         uint32_t *out);

// # Safety
// `scenario` must be null or a handle not yet freed.
void mfg_scenario_free(struct MfgScenario *scenario);

// Solves for the mean-field equilibrium. On `MFG_NOT_CONVERGED` the best
// iterate is still written to `out`.
//
// # Safety
// `scenario` must be a live handle and `out` valid for writes.
enum MfgStatus mfg_solve(const struct MfgScenario *scenario, struct MfgSolution **out);

// # Safety
// `solution` must be a live handle and `out` valid for writes.
enum MfgStatus mfg_solution_converged(const struct MfgSolution *solution, bool *out);

// # Safety
// `solution` must be a live handle and `out` valid for writes.
enum MfgStatus mfg_solution_iterations(const struct MfgSolution *solution, size_t *out);

// Fixed-point residual of the returned policy.
//
// # Safety
// `solution` must be a live handle and `out` valid for writes.
enum MfgStatus mfg_solution_residual(const struct MfgSolution *solution, double *out);

// Acceptance probability of class `class` at every grid point.
//
// # Safety
// `solution` must be a live handle and `buf` valid for `len` writes.
enum MfgStatus mfg_solution_alpha(const struct MfgSolution *solution,
                                  size_t class_,
                                  double *buf,
                                  size_t len);

// Infected fraction of class `class` at every grid point.
//
// # Safety
// `solution` must be a live handle and `buf` valid for `len` writes.
enum MfgStatus mfg_solution_infected(const struct MfgSolution *solution,
                                     size_t class_,
                                     double *buf,
                                     size_t len);

// Probability that a random link points to an infected node.
//
// # Safety
// `solution` must be a live handle and `buf` valid for `len` writes.
enum MfgStatus mfg_solution_theta(const struct MfgSolution *solution, double *buf, size_t len);

// # Safety
// `solution` must be null or a handle not yet freed.
void mfg_solution_free(struct MfgSolution *solution);

// Evaluates the always-accept policy.
//
// # Safety
// `scenario` must be a live handle and `out` valid for writes.
enum MfgStatus mfg_baseline(const struct MfgScenario *scenario, struct MfgBaseline **out);

// # Safety
// `baseline` must be a live handle and `buf` valid for `len` writes.
enum MfgStatus mfg_baseline_infected(const struct MfgBaseline *baseline,
                                     size_t class_,
                                     double *buf,
                                     size_t len);

// Expected unscaled QoI of class `class` at every grid point.
//
// # Safety
// `baseline` must be a live handle and `buf` valid for `len` writes.
enum MfgStatus mfg_baseline_qoi(const struct MfgBaseline *baseline,
                                size_t class_,
                                double *buf,
                                size_t len);

// # Safety
// `baseline` must be null or a handle not yet freed.
void mfg_baseline_free(struct MfgBaseline *baseline);

// Simulates `replicas` populations of `n` nodes under the solution's
// policy. Results depend only on `seed`.
//
// # Safety
// `scenario` and `solution` must be live handles and `out` valid for writes.
enum MfgStatus mfg_simulate(const struct MfgScenario *scenario,
                            const struct MfgSolution *solution,
                            uint32_t n,
                            size_t replicas,
                            uint64_t seed,
                            struct MfgFiniteResult **out);

// Replica-averaged empirical link infection probability.
//
// # Safety
// `result` must be a live handle and `buf` valid for `len` writes.
enum MfgStatus mfg_finite_theta(const struct MfgFiniteResult *result, double *buf, size_t len);

// Replica-averaged squared distance to the mean-field trajectory.
//
// # Safety
// `result` must be a live handle and `buf` valid for `len` writes.
enum MfgStatus mfg_finite_deviation(const struct MfgFiniteResult *result, double *buf, size_t len);

// # Safety
// `result` must be null or a handle not yet freed.
void mfg_finite_free(struct MfgFiniteResult *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MISINFO_MFG_H */
