#ifndef RENEWAL_SIR_H
#define RENEWAL_SIR_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RsComponent {
  RS_COMPONENT_SUSCEPTIBLE = 0,
  RS_COMPONENT_INFECTED = 1,
  RS_COMPONENT_RECOVERED = 2,
} RsComponent;

typedef enum RsStatus {
  RS_STATUS_OK = 0,
  RS_STATUS_NULL_POINTER = 1,
  RS_STATUS_INVALID_UTF8 = 2,
  RS_STATUS_INVALID_SCENARIO = 3,
  RS_STATUS_SOLVER_FAILURE = 4,
  RS_STATUS_OUT_OF_RANGE = 5,
  RS_STATUS_BUFFER_TOO_SMALL = 6,
  RS_STATUS_IO = 7,
  RS_STATUS_PANIC = 8,
} RsStatus;

/**
 * A resolved, validated scenario.
 */
typedef struct RsScenario RsScenario;

/**
 * Output of a solve. May end early at a detected blow-up.
 */
typedef struct RsTrajectory RsTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread; empty if none. Valid until the
 * next call into this library on the same thread.
 */
const char *rs_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rs_version(void);

/**
 * Parses and validates a TOML scenario.
 */
enum RsStatus rs_scenario_from_toml(const char *toml, struct RsScenario **out);

/**
 * Reads, parses and validates a TOML scenario file.
 */
enum RsStatus rs_scenario_from_file(const char *path, struct RsScenario **out);

void rs_scenario_free(struct RsScenario *scenario);

/**
 * Runs the solver. `threads == 0` keeps everything on the calling thread.
 */
enum RsStatus rs_simulate(const struct RsScenario *scenario,
                          size_t threads,
                          struct RsTrajectory **out);

void rs_trajectory_free(struct RsTrajectory *traj);

/**
 * 1 if the run reached the horizon, 0 if it stopped at a blow-up, -1 on null.
 */
int rs_trajectory_completed(const struct RsTrajectory *traj);

/**
 * Time at which blow-up was detected; fails with `OutOfRange` for complete runs.
 */
enum RsStatus rs_trajectory_blowup_time(const struct RsTrajectory *traj, double *out);

/**
 * Number of output times, 0 on null.
 */
size_t rs_trajectory_time_count(const struct RsTrajectory *traj);

/**
 * Number of values per profile: every grid node, interface nodes counted twice.
 */
size_t rs_trajectory_node_count(const struct RsTrajectory *traj);

enum RsStatus rs_trajectory_time(const struct RsTrajectory *traj, size_t index, double *out);

/**
 * Integrals of S, I and R at output `index`, written to `out[0..3]`.
 */
enum RsStatus rs_trajectory_masses(const struct RsTrajectory *traj, size_t index, double *out);

/**
 * Node ages in profile order, `len >= rs_trajectory_node_count`.
 */
enum RsStatus rs_trajectory_ages(const struct RsTrajectory *traj, double *buf, size_t len);

/**
 * Nodal values of one component at output `index`.
 */
enum RsStatus rs_trajectory_profile(const struct RsTrajectory *traj,
                                    size_t index,
                                    enum RsComponent component,
                                    double *buf,
                                    size_t len);

/**
 * Writes `trajectory.csv` and `summary.csv` into an existing directory.
 */
enum RsStatus rs_trajectory_write_csv(const struct RsTrajectory *traj, const char *dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RENEWAL_SIR_H */
