#ifndef POLYSLS_H
#define POLYSLS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PolyslsStatus {
  POLYSLS_STATUS_OK = 0,
  POLYSLS_STATUS_INVALID_ARGUMENT = 1,
  POLYSLS_STATUS_CONFIG = 2,
  POLYSLS_STATUS_OVERFLOW = 3,
  POLYSLS_STATUS_VERIFICATION = 4,
  POLYSLS_STATUS_DIVERGENCE = 5,
  POLYSLS_STATUS_IO = 6,
  POLYSLS_STATUS_PANIC = 7,
} PolyslsStatus;

/**
 * Synthesized state and input closed-loop maps.
 */
typedef struct PolyslsClm PolyslsClm;

/**
 * Online controller: reconstructs disturbances from observed states.
 */
typedef struct PolyslsController PolyslsController;

/**
 * Polynomial dynamics `x_{t+1} = f(x_t) + u_t + w_t`.
 */
typedef struct PolyslsModel PolyslsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent failure on this thread, or an empty string.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *polysls_last_error(void);

/**
 * Builds a built-in model (`scalar_quadratic`, `cylinder_wake`).
 * `params_json` is an optional JSON object of parameter overrides.
 *
 * # Safety
 * `name` and `params_json` (if non-null) must be NUL-terminated strings;
 * `out` must be a valid pointer.
 */
enum PolyslsStatus polysls_model_builtin(const char *name,
                                         const char *params_json,
                                         struct PolyslsModel **out);

/**
 * # Safety
 * `model` must be a valid handle; `out` a valid pointer.
 */
enum PolyslsStatus polysls_model_dim(const struct PolyslsModel *model, size_t *out);

/**
 * Number of alpha slots for `model` at FIR horizon `horizon`.
 *
 * # Safety
 * `model` must be a valid handle; `out` a valid pointer.
 */
enum PolyslsStatus polysls_slot_count(const struct PolyslsModel *model,
                                      size_t horizon,
                                      size_t *out);

/**
 * Synthesizes the closed-loop maps. `alpha` holds either one value applied
 * to every slot or one value per slot in table order.
 *
 * # Safety
 * `model` must be a valid handle, `alpha` must point to `alpha_len`
 * doubles and `out` must be a valid pointer.
 */
enum PolyslsStatus polysls_synthesize(const struct PolyslsModel *model,
                                      size_t horizon,
                                      const double *alpha,
                                      size_t alpha_len,
                                      struct PolyslsClm **out);

/**
 * # Safety
 * `clm` must be a valid handle; `horizon` and `dim` valid pointers.
 */
enum PolyslsStatus polysls_clm_shape(const struct PolyslsClm *clm, size_t *horizon, size_t *dim);

/**
 * Evaluates the state map on a window of `(T+1)*n` values.
 *
 * # Safety
 * `clm` must be a valid handle; `window` must point to `window_len`
 * doubles and `out` to `out_len` writable doubles.
 */
enum PolyslsStatus polysls_clm_state(const struct PolyslsClm *clm,
                                     const double *window,
                                     size_t window_len,
                                     double *out,
                                     size_t out_len);

/**
 * Evaluates the input map on a window of `(T+1)*n` values.
 *
 * # Safety
 * Same as [`polysls_clm_state`].
 */
enum PolyslsStatus polysls_clm_input(const struct PolyslsClm *clm,
                                     const double *window,
                                     size_t window_len,
                                     double *out,
                                     size_t out_len);

/**
 * Largest achievability residual over `trials` random windows. Returns
 * `POLYSLS_STATUS_VERIFICATION` when it exceeds `tolerance`; the residual
 * is written either way.
 *
 * # Safety
 * `clm` and `model` must be valid handles; `residual` a valid pointer.
 */
enum PolyslsStatus polysls_verify(const struct PolyslsClm *clm,
                                  const struct PolyslsModel *model,
                                  size_t trials,
                                  uint64_t seed,
                                  double tolerance,
                                  double *residual);

/**
 * Writes the maps to a JSON archive.
 *
 * # Safety
 * `clm` must be a valid handle; `path` a NUL-terminated string.
 */
enum PolyslsStatus polysls_clm_save(const struct PolyslsClm *clm, const char *path);

/**
 * Reads an archive. With a non-null `model`, the archive must have been
 * built for the same dynamics.
 *
 * # Safety
 * `path` must be a NUL-terminated string, `model` null or a valid handle
 * and `out` a valid pointer.
 */
enum PolyslsStatus polysls_clm_load(const char *path,
                                    const struct PolyslsModel *model,
                                    struct PolyslsClm **out);

/**
 * # Safety
 * `clm` must be a valid handle; `out` a valid pointer.
 */
enum PolyslsStatus polysls_controller_new(const struct PolyslsClm *clm,
                                          struct PolyslsController **out);

/**
 * Observes `x_t` (`n` values) and writes `u_t` to `u_out`.
 *
 * # Safety
 * Handles must be valid; `x` must point to `n` doubles and `u_out` to `n`
 * writable doubles.
 */
enum PolyslsStatus polysls_controller_step(struct PolyslsController *controller,
                                           const struct PolyslsClm *clm,
                                           const struct PolyslsModel *model,
                                           const double *x,
                                           size_t n,
                                           double *u_out);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void polysls_model_free(struct PolyslsModel *model);

/**
 * # Safety
 * `clm` must be null or a handle not yet freed.
 */
void polysls_clm_free(struct PolyslsClm *clm);

/**
 * # Safety
 * `controller` must be null or a handle not yet freed.
 */
void polysls_controller_free(struct PolyslsController *controller);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POLYSLS_H */
