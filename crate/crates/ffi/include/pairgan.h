#ifndef PAIRGAN_H
#define PAIRGAN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PgStatus {
  PG_STATUS_OK = 0,
  PG_STATUS_NULL_POINTER = 1,
  PG_STATUS_INVALID_ARGUMENT = 2,
  PG_STATUS_SHAPE = 3,
  PG_STATUS_IO = 4,
  PG_STATUS_NUMERICAL = 5,
  PG_STATUS_CHECKPOINT = 6,
  PG_STATUS_EMPTY = 7,
  PG_STATUS_INTERNAL = 99,
} PgStatus;

typedef enum PgDirection {
  PG_DIRECTION_HIGHER = 0,
  PG_DIRECTION_LOWER = 1,
} PgDirection;

typedef enum PgTarget {
  PG_TARGET_NONE = 0,
  PG_TARGET_GENERATOR = 1,
  PG_TARGET_DISCRIMINATOR = 2,
} PgTarget;

/**
 * Opaque generator loaded from a checkpoint.
 */
typedef struct PgGenerator PgGenerator;

/**
 * Opaque per-network loss history.
 */
typedef struct PgLossHistory PgLossHistory;

typedef struct PgSchedulerConfig {
  size_t nu;
  double epsilon;
  double kappa;
  uint32_t k_max;
  bool enabled;
  enum PgDirection direction;
} PgSchedulerConfig;

typedef struct PgDecision {
  enum PgTarget target;
  uint32_t extra_batches;
  double rps_g;
  double rps_d;
  double delta;
} PgDecision;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL if none.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *pg_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pg_version(void);

struct PgLossHistory *pg_history_new(void);

/**
 * # Safety
 * `history` must be NULL or a pointer from [`pg_history_new`] not yet freed.
 */
void pg_history_free(struct PgLossHistory *history);

/**
 * Append one epoch loss. `floored` (optional) receives 1 when the value was
 * raised to the positive floor.
 *
 * # Safety
 * `history` must be a live handle; `floored` must be NULL or writable.
 */
enum PgStatus pg_history_record(struct PgLossHistory *history, double loss, bool *floored);

/**
 * Number of recorded epochs (0 for NULL).
 *
 * # Safety
 * `history` must be NULL or a live handle.
 */
size_t pg_history_len(const struct PgLossHistory *history);

/**
 * Relative performance score over the last `nu` epochs.
 *
 * # Safety
 * `history` must be a live handle and `out` writable.
 */
enum PgStatus pg_history_rps(const struct PgLossHistory *history, size_t nu, double *out);

/**
 * Fill `out` with the default scheduler settings.
 *
 * # Safety
 * `out` must be writable.
 */
enum PgStatus pg_scheduler_config_default(struct PgSchedulerConfig *out);

/**
 * Reallocation decision for a pair of scores.
 *
 * # Safety
 * `config` must be readable and `out` writable.
 */
enum PgStatus pg_decide(double rps_g,
                        double rps_d,
                        const struct PgSchedulerConfig *config,
                        struct PgDecision *out);

/**
 * Fréchet distance between two Gaussians given as mean vectors of length
 * `dim` and row-major `dim × dim` covariance matrices.
 *
 * # Safety
 * Each pointer must reference at least the stated number of doubles; `out` must be writable.
 */
enum PgStatus pg_frechet_distance(const double *mu_a,
                                  const double *sigma_a,
                                  const double *mu_b,
                                  const double *sigma_b,
                                  size_t dim,
                                  double *out);

/**
 * Load a generator checkpoint for square images of side `image_size`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum PgStatus pg_generator_load(const char *path, size_t image_size, struct PgGenerator **out);

/**
 * # Safety
 * `generator` must be NULL or a handle from [`pg_generator_load`] not yet freed.
 */
void pg_generator_free(struct PgGenerator *generator);

/**
 * Floats per image (`channels × size × size`) the generator consumes; 0 for NULL.
 *
 * # Safety
 * `generator` must be NULL or a live handle.
 */
size_t pg_generator_sample_len(const struct PgGenerator *generator);

/**
 * Restore `count` images. `input` and `output` are planar (N, C, H, W) in
 * `[−1, 1]`, each `count × pg_generator_sample_len` floats long.
 *
 * # Safety
 * `generator` must be a live handle; the buffers must hold the stated lengths.
 */
enum PgStatus pg_generator_run(const struct PgGenerator *generator,
                               const float *input,
                               size_t count,
                               float *output,
                               size_t output_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PAIRGAN_H */
