/* C interface for the anderson-lab numerical library. */

#ifndef ANDERSON_LAB_H
#define ANDERSON_LAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Success.
#define AL_OK 0

// A required pointer was null or a buffer too small.
#define AL_NULL_POINTER 1

// The model description was rejected.
#define AL_INVALID_MODEL 2

// The computation failed numerically or was not applicable.
#define AL_NUMERICAL 3

// Opaque model handle.
typedef struct AlModel AlModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the most recent failure on this thread; the pointer stays
// valid until the next failing call on the same thread.
const char *al_last_error(void);

// Block model with couplings uniform on `[lo, hi]`.
//
// # Safety
// `f` must point to `alpha` doubles; `out` must be a valid out-pointer.
int32_t al_model_new_uniform(const double *f,
                             size_t alpha,
                             double lo,
                             double hi,
                             double v0_constant,
                             struct AlModel **out);

// Block model with a piecewise-constant coupling density:
// `n_break` breakpoints delimiting `n_break - 1` constant values.
//
// # Safety
// `f`, `breakpoints`, `values` must point to buffers of the stated
// lengths; `out` must be a valid out-pointer.
int32_t al_model_new_density(const double *f,
                             size_t alpha,
                             const double *breakpoints,
                             size_t n_break,
                             const double *values,
                             double v0_constant,
                             struct AlModel **out);

// Block model with finitely many coupling atoms; pass `probs = NULL`
// for uniform weights.
//
// # Safety
// `f` and `points` (and `probs` when non-null) must point to buffers of
// the stated lengths; `out` must be a valid out-pointer.
int32_t al_model_new_atomic(const double *f,
                            size_t alpha,
                            const double *points,
                            const double *probs,
                            size_t n_points,
                            double v0_constant,
                            struct AlModel **out);

// Release a model handle; accepts null.
//
// # Safety
// `model` must come from a constructor and not be freed twice.
void al_model_free(struct AlModel *model);

// Block length α of the model.
//
// # Safety
// `model` must be a live handle.
size_t al_model_alpha(const struct AlModel *model);

// Deterministic spectrum enclosure `Σ₀ = [lo, hi]`.
//
// # Safety
// `model` must be a live handle; `lo`/`hi` valid out-pointers.
int32_t al_sigma0(const struct AlModel *model, double *lo, double *hi);

// Monte-Carlo Lyapunov exponent over `n_blocks` i.i.d. blocks.
//
// # Safety
// `model` must be a live handle; `gamma`/`stderr_out` valid
// out-pointers.
int32_t al_lyapunov(const struct AlModel *model,
                    double energy,
                    size_t n_blocks,
                    uint64_t seed,
                    double *gamma,
                    double *stderr_out);

// Averaged eigenfunction correlator from site 0 to the first `l` block
// multiples; `rho` receives `l` values (`rho[0] = 1`).
//
// # Safety
// `model` must be a live handle; `rho` must hold `l` doubles.
int32_t al_correlator_profile(const struct AlModel *model,
                              size_t l,
                              size_t n_realizations,
                              uint64_t seed,
                              double *rho);

// Discretized L² norm of the contraction kernel at one energy
// (`n`-cell averaged grid; requires an absolutely continuous law).
//
// # Safety
// `model` must be a live handle; `norm` a valid out-pointer.
int32_t al_contraction_norm(const struct AlModel *model, double energy, size_t n, double *norm);

// Almost-sure spectrum bands from periodic words. `bands` receives up
// to `cap` `(lo, hi)` pairs (2·cap doubles); `n_bands` reports the
// number of pairs written.
//
// # Safety
// `model` must be a live handle; `bands` must hold `2 * cap` doubles;
// `n_bands` a valid out-pointer.
int32_t al_spectrum_bands(const struct AlModel *model,
                          size_t period_blocks,
                          size_t grid_n,
                          uint64_t seed,
                          double *bands,
                          size_t cap,
                          size_t *n_bands);

// Worst deviation of the order-`n` exceptional monodromies from the
// identity (zero when the exceptional support is empty).
//
// # Safety
// `max_dev` must be a valid out-pointer.
int32_t al_exceptional_deviation(uint32_t n, double *max_dev);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* ANDERSON_LAB_H */
