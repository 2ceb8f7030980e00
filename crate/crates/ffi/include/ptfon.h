#ifndef PTFON_H
#define PTFON_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  PTFON_STATUS_OK = 0,
  PTFON_STATUS_NULL_POINTER = 1,
  PTFON_STATUS_INVALID_INPUT = 2,
  PTFON_STATUS_INSUFFICIENT_HISTORY = 3,
  PTFON_STATUS_PARSE = 4,
  PTFON_STATUS_INFEASIBLE = 5,
  PTFON_STATUS_UTILITY_UNDEFINED = 6,
  PTFON_STATUS_UNDEFINED_FAIRNESS = 7,
  PTFON_STATUS_IO = 8,
  PTFON_STATUS_INTERNAL = 9,
} PtfonStatus;

/**
 * System configuration handle.
 */
typedef struct PtfonConfig PtfonConfig;

/**
 * K-SEP filter state.
 */
typedef struct PtfonKalman PtfonKalman;

/**
 * One frame's schedule.
 */
typedef struct PtfonSchedule PtfonSchedule;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread. Valid until the next
 * failing call on the same thread; never null.
 */
const char *ptfon_last_error_message(void);

/**
 * The built-in reference configuration (48 × 30 min slots, three gateways).
 */
PtfonConfig *ptfon_config_reference(void);

/**
 * # Safety
 * `path_loss_db` must point to `gateways` doubles and `out` must be valid.
 */
PtfonStatus ptfon_config_new(double bandwidth_hz,
                             double noise_density_w_per_hz,
                             double slot_length_s,
                             size_t slots_per_frame,
                             const double *path_loss_db,
                             size_t gateways,
                             double epsilon_time_s,
                             PtfonConfig **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` must be valid.
 */
PtfonStatus ptfon_config_from_file(const char *path, PtfonConfig **out);

/**
 * # Safety
 * `cfg` must come from this library and not be used afterwards. Null is ignored.
 */
void ptfon_config_free(PtfonConfig *cfg);

/**
 * Zero for a null handle.
 *
 * # Safety
 * `cfg` must be null or a live handle.
 */
size_t ptfon_config_gateways(const PtfonConfig *cfg);

/**
 * Zero for a null handle.
 *
 * # Safety
 * `cfg` must be null or a live handle.
 */
size_t ptfon_config_slots_per_frame(const PtfonConfig *cfg);

/**
 * Achievable rate (bit/s) to `gateway` at `power_w`.
 *
 * # Safety
 * `cfg` and `out` must be valid.
 */
PtfonStatus ptfon_rate(const PtfonConfig *cfg, size_t gateway, double power_w, double *out);

/**
 * Flat causal power profile; writes `len` watts to `power_w`.
 *
 * # Safety
 * `energies_j` and `power_w` must each hold `len` doubles.
 */
PtfonStatus ptfon_flat_power(const PtfonConfig *cfg,
                             const double *energies_j,
                             size_t len,
                             double *power_w);

/**
 * Offline PTF over one frame of known harvests.
 *
 * # Safety
 * `energies_j` must hold `len` doubles; `out` must be valid.
 */
PtfonStatus ptfon_schedule_ptf(const PtfonConfig *cfg,
                               const double *energies_j,
                               size_t len,
                               PtfonSchedule **out);

/**
 * SG+TDMA over one frame.
 *
 * # Safety
 * As for [`ptfon_schedule_ptf`].
 */
PtfonStatus ptfon_schedule_sgtdma(const PtfonConfig *cfg,
                                  const double *energies_j,
                                  size_t len,
                                  PtfonSchedule **out);

/**
 * # Safety
 * `s` must come from this library and not be used afterwards. Null is ignored.
 */
void ptfon_schedule_free(PtfonSchedule *s);

/**
 * Zero for a null handle.
 *
 * # Safety
 * `s` must be null or a live handle.
 */
size_t ptfon_schedule_slots(const PtfonSchedule *s);

/**
 * Zero for a null handle.
 *
 * # Safety
 * `s` must be null or a live handle.
 */
size_t ptfon_schedule_gateways(const PtfonSchedule *s);

/**
 * # Safety
 * `s` and `out` must be valid.
 */
PtfonStatus ptfon_schedule_power(const PtfonSchedule *s, size_t slot, double *out);

/**
 * Gateway owning `slot`, or -1 when the slot is shared.
 *
 * # Safety
 * `s` and `out` must be valid.
 */
PtfonStatus ptfon_schedule_gateway(const PtfonSchedule *s, size_t slot, int64_t *out);

/**
 * Airtime (s) of `gateway` in `slot`.
 *
 * # Safety
 * `s` and `out` must be valid.
 */
PtfonStatus ptfon_schedule_time(const PtfonSchedule *s, size_t slot, size_t gateway, double *out);

/**
 * # Safety
 * `s` and `out` must be valid.
 */
PtfonStatus ptfon_schedule_gateway_bits(const PtfonSchedule *s, size_t gateway, double *out);

/**
 * `Σ log2 R_n`; fails with `UtilityUndefined` if some gateway got no bits.
 *
 * # Safety
 * `s` and `out` must be valid.
 */
PtfonStatus ptfon_schedule_utility(const PtfonSchedule *s, double *out);

/**
 * Starts a K-SEP filter from the 48 harvests (J, oldest first) preceding
 * the next measurement.
 *
 * # Safety
 * `previous_day_j` must hold `len` doubles; `out` must be valid.
 */
PtfonStatus ptfon_kalman_new(const double *previous_day_j,
                             size_t len,
                             double last_irradiation,
                             double alpha1,
                             double alpha2,
                             double beta1,
                             double sigma_w_sq,
                             double sigma_v_sq,
                             size_t next_phase,
                             PtfonKalman **out);

/**
 * Measures `z_j`, propagates with `y`, writes the clamped next prediction.
 *
 * # Safety
 * `k` and `prediction_j` must be valid.
 */
PtfonStatus ptfon_kalman_step(PtfonKalman *k, double y, double z_j, double *prediction_j);

/**
 * # Safety
 * `k` must come from this library and not be used afterwards. Null is ignored.
 */
void ptfon_kalman_free(PtfonKalman *k);

/**
 * # Safety
 * `x` must hold `len` doubles; `out` must be valid.
 */
PtfonStatus ptfon_jain_index(const double *x, size_t len, double *out);

/**
 * # Safety
 * `out` must be valid.
 */
PtfonStatus ptfon_ssep_predict(double day_minus_1_j, double day_minus_2_j, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PTFON_H */
