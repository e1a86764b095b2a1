#ifndef ACTIVE_RHEOLOGY_H
#define ACTIVE_RHEOLOGY_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible call.
typedef enum ArStatus {
  AR_STATUS_OK = 0,
  AR_STATUS_NULL_POINTER = 1,
  AR_STATUS_INVALID_ARGUMENT = 2,
  AR_STATUS_PARSE = 3,
  AR_STATUS_INFEASIBLE = 4,
  AR_STATUS_SOLVER_FAILURE = 5,
  AR_STATUS_IO = 6,
  AR_STATUS_BUFFER_TOO_SMALL = 7,
  AR_STATUS_PANIC = 8,
  AR_STATUS_OTHER = 9,
} ArStatus;

// Validated run configuration.
typedef struct ArConfig ArConfig;

// Particle configuration on a torus.
typedef struct ArEnsemble ArEnsemble;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the next failing call.
const char *ar_last_error_message(void);

// Clears the stored error message.
void ar_clear_error(void);

// Library version as a static nul-terminated string.
const char *ar_version(void);

// The shipped default configuration.
struct ArConfig *ar_config_default(void);

// Parses and validates a JSON configuration (unknown keys rejected).
enum ArStatus ar_config_from_json(const char *json, struct ArConfig **out);

void ar_config_free(struct ArConfig *cfg);

// Hex SHA-256 of the configuration (65 bytes with the nul).
enum ArStatus ar_config_hash(const struct ArConfig *cfg, char *buf, size_t len, size_t *needed);

// Resolved configuration as pretty JSON.
enum ArStatus ar_config_to_json(const struct ArConfig *cfg, char *buf, size_t len, size_t *needed);

// Hardcore sample of unit spheres with intensity `lambda1` on the torus of side `side`.
enum ArStatus ar_ensemble_sample(size_t dim,
                                 double side,
                                 double lambda1,
                                 double hardcore,
                                 uint64_t seed,
                                 struct ArEnsemble **out);

void ar_ensemble_free(struct ArEnsemble *e);

// Number of particles; 0 for a null handle.
size_t ar_ensemble_len(const struct ArEnsemble *e);

enum ArStatus ar_ensemble_volume_fraction(const struct ArEnsemble *e, double *out);

// Center of particle `i` into `center[0..3]` (unused components zero).
enum ArStatus ar_ensemble_center(const struct ArEnsemble *e, size_t i, double *center);

// Verifies the hardcore invariant; InvalidArgument-class failures describe the offending pair.
enum ArStatus ar_ensemble_audit(const struct ArEnsemble *e);

// Closed-form pusher/puller shear scalar of a point dipole.
enum ArStatus ar_pusher_puller_shear(double gamma,
                                     double r,
                                     double fmag,
                                     double s,
                                     size_t dim,
                                     double *out);

// Dilute quantities for a configuration: E:2B_act^(1)(E) and the viscosity-reduction margin |E|² − E:B_tot(E).
enum ArStatus ar_dilute(const struct ArConfig *cfg,
                        double *shear_scalar,
                        double *margin);

// Runs the invariant suite; `passed` receives 1 iff every check passes.
enum ArStatus ar_verify(const struct ArConfig *cfg, int32_t *passed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ACTIVE_RHEOLOGY_H */
