#ifndef DOORMPC_H
#define DOORMPC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Number of constraint rows in [`DmTickRecord::constraints`].
 */
#define DM_CONSTRAINT_COUNT 6

typedef enum DmErrorCode {
  DM_OK = 0,
  DM_NULL_POINTER = 1,
  DM_INVALID_ARGUMENT = 2,
  DM_CONFIG = 3,
  DM_IO = 4,
  DM_DIVERGENCE = 5,
  DM_ATTACHMENT_LOST = 6,
  DM_NUMERICAL = 7,
  DM_OUT_OF_RANGE = 8,
  DM_PANIC = 9,
} DmErrorCode;

typedef enum DmLogFormat {
  DM_LOG_CSV = 0,
  DM_LOG_JSON_LINES = 1,
} DmLogFormat;

/**
 * Opaque scenario configuration.
 */
typedef struct DmConfig DmConfig;

/**
 * Opaque planner plus tracking controller.
 */
typedef struct DmPlanner DmPlanner;

/**
 * Opaque closed-loop run log.
 */
typedef struct DmRunLog DmRunLog;

/**
 * Summary of one logged tick.
 */
typedef struct DmTickRecord {
  double time;
  double plant[12];
  double planner[9];
  double input[8];
  double constraints[DM_CONSTRAINT_COUNT];
  uint32_t iterations;
  bool converged;
  bool degraded;
} DmTickRecord;

/**
 * Vehicle measurement. Angles in rad, body rate in the body frame.
 */
typedef struct DmMeasurement {
  double position[3];
  double velocity[3];
  /**
   * Roll, pitch, yaw (ZYX).
   */
  double attitude[3];
  double body_rate[3];
  double joints[4];
  double joint_rates[4];
} DmMeasurement;

/**
 * Setpoint emitted by one planner tick.
 */
typedef struct DmSetpoint {
  double position[3];
  double velocity[3];
  double yaw;
  double joint_rates[4];
  /**
   * Planned thrust vector, world frame (N).
   */
  double force[3];
  double body_rate[3];
  /**
   * Planned state at the setpoint knot.
   */
  double planned[9];
  double residual;
  uint32_t iterations;
  bool converged;
  bool degraded;
} DmSetpoint;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next `dm_*` call on the same thread.
 */
const char *dm_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *dm_version(void);

/**
 * The built-in door-opening scenario.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum DmErrorCode dm_config_bundled(struct DmConfig **out);

/**
 * Loads and validates a scenario file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum DmErrorCode dm_config_load(const char *path, struct DmConfig **out);

/**
 * Parses a scenario from TOML text.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` must be writable.
 */
enum DmErrorCode dm_config_parse(const char *text, struct DmConfig **out);

/**
 * # Safety
 * `cfg` must be a live handle.
 */
enum DmErrorCode dm_config_set_duration(struct DmConfig *cfg, double seconds);

/**
 * # Safety
 * `cfg` must be a live handle.
 */
enum DmErrorCode dm_config_set_seed(struct DmConfig *cfg, uint64_t seed);

/**
 * # Safety
 * `cfg` must be null or a handle not yet freed.
 */
void dm_config_free(struct DmConfig *cfg);

/**
 * Runs the closed loop described by `cfg`.
 *
 * # Safety
 * `cfg` must be a live handle; `out` must be writable.
 */
enum DmErrorCode dm_run_scenario(const struct DmConfig *cfg, struct DmRunLog **out);

/**
 * # Safety
 * `log` must be a live handle; `len` must be writable.
 */
enum DmErrorCode dm_log_len(const struct DmRunLog *log, size_t *len);

/**
 * # Safety
 * `log` must be a live handle; `out` must be writable.
 */
enum DmErrorCode dm_log_record(const struct DmRunLog *log, size_t index, struct DmTickRecord *out);

/**
 * # Safety
 * `log` must be a live handle; `path` a NUL-terminated string.
 */
enum DmErrorCode dm_log_write(const struct DmRunLog *log,
                              const char *path,
                              enum DmLogFormat format);

/**
 * # Safety
 * `log` must be null or a handle not yet freed.
 */
void dm_log_free(struct DmRunLog *log);

/**
 * Planner and controller built from a scenario configuration.
 *
 * # Safety
 * `cfg` must be a live handle; `out` must be writable.
 */
enum DmErrorCode dm_planner_new(const struct DmConfig *cfg, struct DmPlanner **out);

/**
 * One receding-horizon tick: convert, solve warm-started, emit a setpoint.
 *
 * # Safety
 * `planner` must be a live handle; `m` readable; `out` writable.
 */
enum DmErrorCode dm_planner_tick(struct DmPlanner *planner,
                                 const struct DmMeasurement *m,
                                 struct DmSetpoint *out);

/**
 * Tracking-controller command for a setpoint: thrust (N), body torque (N m)
 * and four joint rates (rad/s), written to `input[0..8]`.
 *
 * # Safety
 * `planner` must be a live handle; `sp` and `m` readable; `input` must point
 * to eight writable doubles.
 */
enum DmErrorCode dm_planner_command(const struct DmPlanner *planner,
                                    const struct DmSetpoint *sp,
                                    const struct DmMeasurement *m,
                                    double *input);

/**
 * Forgets the previous plan so the next tick starts cold.
 *
 * # Safety
 * `planner` must be a live handle.
 */
enum DmErrorCode dm_planner_reset(struct DmPlanner *planner);

/**
 * # Safety
 * `planner` must be null or a handle not yet freed.
 */
void dm_planner_free(struct DmPlanner *planner);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DOORMPC_H */
