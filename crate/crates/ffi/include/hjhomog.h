#ifndef HJHOMOG_H
#define HJHOMOG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum HjStatus {
  HjStatus_Ok = 0,
  HjStatus_NullPointer = 1,
  HjStatus_InvalidArgument = 2,
  HjStatus_SolverFailed = 3,
} HjStatus;

/**
 * Opaque environment handle.
 */
typedef struct HjEnv HjEnv;

/**
 * Opaque converged metric solution.
 */
typedef struct HjMetric HjMetric;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *hj_last_error(void);

/**
 * Library version as a static string.
 */
const char *hj_version(void);

/**
 * Builds a constant-coefficient environment:
 * `H(p, y) = coef |p|^q`, `Sigma = sigma_a0 I`.
 *
 * # Safety
 * `out` must be a valid pointer to an `HjEnv*` slot.
 */
enum HjStatus hj_env_new_deterministic(uint32_t d,
                                       double q,
                                       double lambda,
                                       double coef,
                                       double sigma_a0,
                                       struct HjEnv **out);

/**
 * Builds a truncated-Poissonian environment with bump-modulated
 * coefficient. `constrained != 0` forces the potential to zero.
 *
 * # Safety
 * `out` must be a valid pointer to an `HjEnv*` slot.
 */
enum HjStatus hj_env_new_poisson(uint32_t d,
                                 double q,
                                 double lambda,
                                 double intensity,
                                 double bump_radius,
                                 double amp,
                                 double vmax,
                                 double coef_amp,
                                 double sigma_a0,
                                 uint32_t constrained,
                                 uint64_t seed,
                                 uint64_t replica,
                                 struct HjEnv **out);

/**
 * Frees an environment handle (null is a no-op).
 *
 * # Safety
 * `env` must be a pointer previously returned by an `hj_env_new_*` call
 * and not yet freed.
 */
void hj_env_free(struct HjEnv *env);

/**
 * Evaluates `H(p, y)`. `p` and `y` point to `d` doubles each.
 *
 * # Safety
 * `env`, `p`, `y`, `out` must be valid for the environment's dimension.
 */
enum HjStatus hj_env_hamiltonian(const struct HjEnv *env,
                                 const double *p,
                                 const double *y,
                                 double *out);

/**
 * Solves the metric problem from a unit ball at the origin on a box of
 * the given radius and spacing.
 *
 * # Safety
 * `env` must be a live environment handle; `out` a valid slot.
 */
enum HjStatus hj_metric_solve(const struct HjEnv *env,
                              double mu,
                              double h,
                              double radius,
                              struct HjMetric **out);

/**
 * Frees a metric solution handle (null is a no-op).
 *
 * # Safety
 * `m` must come from `hj_metric_solve` and not be freed twice.
 */
void hj_metric_free(struct HjMetric *m);

/**
 * Reads the converged field at a point (`y` points to `d` doubles).
 *
 * # Safety
 * `m`, `y`, `out` must be valid; the point must lie inside the solve box.
 */
enum HjStatus hj_metric_value(const struct HjMetric *m, const double *y, double *out);

/**
 * Empirical slope extrema of the converged field.
 *
 * # Safety
 * All pointers must be valid.
 */
enum HjStatus hj_metric_slopes(const struct HjMetric *m, double *l_hat, double *big_l_hat);

/**
 * Estimates the effective Hamiltonian at `p = (px, py)` by bisection over
 * the metric problem, using `n_replicas` copies of the handle's
 * environment family.
 *
 * # Safety
 * `env`, `value`, `half_width` must be valid pointers.
 */
enum HjStatus hj_hbar_estimate(const struct HjEnv *env,
                               double px,
                               double py,
                               uint32_t n_replicas,
                               uint32_t n_directions,
                               double r_max,
                               double h,
                               double tol,
                               double *value,
                               double *half_width);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HJHOMOG_H */
