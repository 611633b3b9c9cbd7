#ifndef IIEKF_H
#define IIEKF_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum IiekfGroup {
  IIEKF_GROUP_SO3 = 0,
  IIEKF_GROUP_SE3 = 1,
  IIEKF_GROUP_SE23 = 2,
} IiekfGroup;

typedef enum IiekfStatus {
  IIEKF_STATUS_OK = 0,
  IIEKF_STATUS_NULL_POINTER = 1,
  IIEKF_STATUS_INVALID_ARGUMENT = 2,
  IIEKF_STATUS_DIMENSION_MISMATCH = 3,
  IIEKF_STATUS_NOT_IN_GROUP = 4,
  IIEKF_STATUS_NOT_PSD = 5,
  IIEKF_STATUS_SINGULAR_INNOVATION = 6,
  IIEKF_STATUS_NON_FINITE = 7,
  IIEKF_STATUS_ANGLE_NEAR_PI = 8,
  IIEKF_STATUS_NOT_CONVERGED = 9,
  IIEKF_STATUS_INCONSISTENT = 10,
  IIEKF_STATUS_IO = 11,
  IIEKF_STATUS_PANIC = 255,
} IiekfStatus;

typedef enum IiekfGainMode {
  IIEKF_GAIN_MODE_STANDARD = 0,
  IIEKF_GAIN_MODE_NOISE_FREE = 1,
  IIEKF_GAIN_MODE_REGULARIZED = 2,
} IiekfGainMode;

// Opaque Gaussian belief on a matrix Lie group.
typedef struct IiekfBelief IiekfBelief;

// Gauss-Newton settings. `delta` is only read in regularized mode.
typedef struct IiekfUpdateOptions {
  double tol;
  size_t n_max;
  enum IiekfGainMode gain_mode;
  double delta;
} IiekfUpdateOptions;

typedef struct IiekfUpdateInfo {
  size_t iterations;
  bool converged;
  double step_norm;
} IiekfUpdateInfo;

// Summary of a solved equation system.
typedef struct IiekfSolveInfo {
  size_t n_equations;
  double max_residual;
  size_t final_rank;
} IiekfSolveInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *iiekf_version(void);

// Length in bytes of the last error message on this thread, including the
// terminating NUL, or 0 when there is none.
size_t iiekf_last_error_length(void);

// Copies the last error message into `buf`, truncating to `len - 1` bytes.
// Returns the number of bytes written excluding the NUL, or -1 if `buf` is
// null or `len` is 0.
//
// # Safety
// `buf` must point to `len` writable bytes.
ptrdiff_t iiekf_last_error_message(char *buf, size_t len);

// Matrix size N of the group's N×N representation.
size_t iiekf_group_matrix_size(enum IiekfGroup group);

// Tangent-space dimension of the group.
size_t iiekf_group_dim(enum IiekfGroup group);

// Exponential map: `xi` has `iiekf_group_dim` entries, `out` receives the
// row-major group matrix.
//
// # Safety
// Pointers must reference buffers of the stated lengths.
enum IiekfStatus iiekf_exp(enum IiekfGroup group,
                           const double *xi,
                           size_t xi_len,
                           double *out,
                           size_t out_len);

// Logarithm of a row-major group matrix into `out` (`iiekf_group_dim`
// entries).
//
// # Safety
// Pointers must reference buffers of the stated lengths.
enum IiekfStatus iiekf_log(enum IiekfGroup group,
                           const double *matrix,
                           size_t matrix_len,
                           double *out,
                           size_t out_len);

// Creates a belief from a row-major mean matrix and covariance. On success
// `*out` owns a handle that must be released with [`iiekf_belief_free`].
//
// # Safety
// Pointers must reference buffers of the stated lengths and `out` must be
// writable.
enum IiekfStatus iiekf_belief_new(enum IiekfGroup group,
                                  const double *mean,
                                  size_t mean_len,
                                  const double *cov,
                                  size_t cov_len,
                                  struct IiekfBelief **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `belief` must come from [`iiekf_belief_new`] or [`iiekf_belief_clone`]
// and must not be used afterwards.
void iiekf_belief_free(struct IiekfBelief *belief);

// Deep copy of a belief; null on failure.
//
// # Safety
// `belief` must be null or a live handle.
struct IiekfBelief *iiekf_belief_clone(const struct IiekfBelief *belief);

// Tangent dimension of the belief's group, or 0 for a null handle.
//
// # Safety
// `belief` must be null or a live handle.
size_t iiekf_belief_dim(const struct IiekfBelief *belief);

// # Safety
// `belief` must be a live handle and `out` must hold `out_len` doubles.
enum IiekfStatus iiekf_belief_mean(const struct IiekfBelief *belief, double *out, size_t out_len);

// # Safety
// `belief` must be a live handle and `out` must hold `out_len` doubles.
enum IiekfStatus iiekf_belief_cov(const struct IiekfBelief *belief, double *out, size_t out_len);

// Iterated invariant update with the measurement `y = χ d + noise`.
//
// `d` and `y` have `iiekf_group_matrix_size` entries. `noise` is the
// row-major covariance on the informative rows of `y`; pass null to treat
// the measurement as exact. `options` may be null for the defaults. On
// failure the belief is left unchanged.
//
// # Safety
// Pointers must be null where allowed or reference buffers of the stated
// lengths; `belief` must be a live handle.
enum IiekfStatus iiekf_belief_update(struct IiekfBelief *belief,
                                     const double *d,
                                     size_t d_len,
                                     const double *y,
                                     size_t y_len,
                                     const double *noise,
                                     size_t noise_len,
                                     const struct IiekfUpdateOptions *options,
                                     struct IiekfUpdateInfo *info);

// Writes `‖χ̂ d − y‖` and `‖H P Hᵀ‖_F`; both vanish when the belief is
// compatible with the exact measurement `y = χ d`.
//
// # Safety
// Pointers must reference buffers of the stated lengths and the outputs
// must be writable.
enum IiekfStatus iiekf_belief_compatibility(const struct IiekfBelief *belief,
                                            const double *d,
                                            size_t d_len,
                                            const double *y,
                                            size_t y_len,
                                            double *residual,
                                            double *projected_cov);

// Solves the group equation system described by a TOML file. The row-major
// solution matrix is written to `solution`; `info` may be null.
//
// # Safety
// `path` must be a NUL-terminated string and `solution` must hold
// `solution_len` doubles.
enum IiekfStatus iiekf_solve_file(const char *path,
                                  double *solution,
                                  size_t solution_len,
                                  struct IiekfSolveInfo *info);

// Runs crane scenario `id` (1, 2 or 3) and writes its result files into
// `out_dir`. `n_sims = 0` keeps the scenario default; `workers = 0` uses
// every core.
//
// # Safety
// `out_dir` must be a NUL-terminated string.
enum IiekfStatus iiekf_run_scenario(uint8_t id,
                                    size_t n_sims,
                                    uint64_t seed,
                                    size_t workers,
                                    const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IIEKF_H */
