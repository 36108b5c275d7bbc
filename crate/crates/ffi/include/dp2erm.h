#ifndef DP2ERM_H
#define DP2ERM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes for every fallible entry point.
 */
typedef enum Dp2ermStatus {
  Dp2ermStatus_Ok = 0,
  /**
   * Invalid argument or configuration.
   */
  Dp2ermStatus_InvalidArgument = 1,
  /**
   * A solver or other runtime step failed.
   */
  Dp2ermStatus_RuntimeFailure = 2,
  /**
   * A required pointer was null.
   */
  Dp2ermStatus_NullPointer = 3,
} Dp2ermStatus;

/**
 * Weighting schemes exposed through the ABI.
 */
typedef enum Dp2ermScheme {
  Dp2ermScheme_IpwEstimated = 0,
  Dp2ermScheme_Mmd = 1,
  Dp2ermScheme_Ebw = 2,
} Dp2ermScheme;

/**
 * Noise mechanisms exposed through the ABI.
 */
typedef enum Dp2ermMechanism {
  Dp2ermMechanism_Gamma = 0,
  Dp2ermMechanism_Gaussian = 1,
} Dp2ermMechanism;

/**
 * Opaque dataset handle.
 */
typedef struct Dp2ermDataset Dp2ermDataset;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null if none.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *dp2erm_last_error(void);

/**
 * ABI version; bump on incompatible changes.
 */
uint32_t dp2erm_abi_version(void);

/**
 * Build a dataset from row-major covariates (n x p), treatments in
 * {-1, +1}, and outcomes. The data is copied; the caller keeps ownership
 * of the input buffers and must free the handle with `dp2erm_dataset_free`.
 *
 * # Safety
 * `covariates` must point to n*p doubles, `treatments` and `outcomes` to n
 * elements each, and `out` must be a valid pointer.
 */
enum Dp2ermStatus dp2erm_dataset_new(const double *covariates,
                                     uintptr_t n,
                                     uintptr_t p,
                                     const int32_t *treatments,
                                     const double *outcomes,
                                     struct Dp2ermDataset **out);

/**
 * Release a dataset handle. Null is a no-op.
 *
 * # Safety
 * `handle` must be null or a pointer returned by `dp2erm_dataset_new` that
 * has not been freed already.
 */
void dp2erm_dataset_free(struct Dp2ermDataset *handle);

/**
 * Randomized-trial inverse propensity weights; writes n doubles to `out`.
 *
 * # Safety
 * `handle` must be a live dataset handle and `out` must hold n doubles.
 */
enum Dp2ermStatus dp2erm_weights_ipw_randomized(const struct Dp2ermDataset *handle,
                                                double p0,
                                                double p1,
                                                double *out);

/**
 * Solve a stage-1 weighting problem; writes n doubles to `out`.
 * `radius_or_alpha` is the ball radius for ipw/ebw and the mixing
 * coefficient alpha for mmd.
 *
 * # Safety
 * `handle` must be a live dataset handle and `out` must hold n doubles.
 */
enum Dp2ermStatus dp2erm_weights_solve(const struct Dp2ermDataset *handle,
                                       enum Dp2ermScheme scheme,
                                       double ridge,
                                       double radius_or_alpha,
                                       double *out);

/**
 * Universal worst-case stability budget at sample size n.
 *
 * # Safety
 * `w1` and `w2` must be valid pointers.
 */
enum Dp2ermStatus dp2erm_budget_universal(uintptr_t n, double *w1, double *w2);

/**
 * Minimal noise scale (1/beta or sigma) and ridge for the given privacy
 * parameters, loss bounds, and stability aggregates.
 *
 * # Safety
 * `noise_scale` and `gamma_ridge` must be valid pointers.
 */
enum Dp2ermStatus dp2erm_calibrate(enum Dp2ermMechanism mechanism,
                                   double epsilon,
                                   double delta,
                                   double zeta,
                                   double hessian_trace,
                                   double w1,
                                   double w2,
                                   uintptr_t n,
                                   uintptr_t p,
                                   double *noise_scale,
                                   double *gamma_ridge);

/**
 * Full two-stage private pipeline with the per-scheme stability budget.
 * Writes p doubles (the private parameter) to `out_theta`.
 *
 * # Safety
 * `handle` must be a live dataset handle and `out_theta` must hold p
 * doubles.
 */
enum Dp2ermStatus dp2erm_run(const struct Dp2ermDataset *handle,
                             enum Dp2ermScheme scheme,
                             double scheme_ridge,
                             double radius_or_alpha,
                             double l1_radius,
                             double covariate_bound,
                             double outcome_bound,
                             enum Dp2ermMechanism mechanism,
                             double epsilon,
                             double delta,
                             uint64_t seed,
                             double *out_theta);

/**
 * Same pipeline with the universal worst-case budget (the composition
 * baseline).
 *
 * # Safety
 * Same contract as `dp2erm_run`.
 */
enum Dp2ermStatus dp2erm_run_composition_baseline(const struct Dp2ermDataset *handle,
                                                  enum Dp2ermScheme scheme,
                                                  double scheme_ridge,
                                                  double radius_or_alpha,
                                                  double l1_radius,
                                                  double covariate_bound,
                                                  double outcome_bound,
                                                  enum Dp2ermMechanism mechanism,
                                                  double epsilon,
                                                  double delta,
                                                  uint64_t seed,
                                                  double *out_theta);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DP2ERM_H */
