#ifndef MIMO_DPD_H
#define MIMO_DPD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum MdStatus {
  MD_STATUS_OK = 0,
  MD_STATUS_NULL_POINTER = 1,
  MD_STATUS_INVALID_ARGUMENT = 2,
  MD_STATUS_CONFIG = 3,
  MD_STATUS_DIVERGENCE = 4,
  MD_STATUS_IO = 5,
  MD_STATUS_ILL_CONDITIONED = 6,
  MD_STATUS_DOMAIN = 7,
  MD_STATUS_PARSE = 8,
  MD_STATUS_PANIC = 9,
} MdStatus;

// Opaque memory polynomial.
typedef struct MdMemoryPolynomial MdMemoryPolynomial;

// Opaque scenario: a validated configuration plus the experiment it builds.
typedef struct MdScenario MdScenario;

// A complex sample, layout-compatible with `double _Complex`.
typedef struct MdComplex {
  double re;
  double im;
} MdComplex;

// Headline figures of one evaluated scheme.
typedef struct MdMetrics {
  double oob_ratio_db;
  // Worst-user NMSE.
  double nmse_db;
  double mean_antenna_nmse_db;
  uint64_t flops;
  uint64_t iterations;
  // 1 or 0 for schemes with a feedback loop, -1 otherwise.
  int32_t converged;
  double zf_residual;
  double precoder_change;
} MdMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Description of the last failure on this thread; empty if none. Never NULL.
const char *md_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *md_version(void);

// Saleh AM/AM response at input amplitude `r`.
//
// # Safety
// `out` must be NULL or a valid pointer.
enum MdStatus md_saleh_amam(double r, double alpha_a, double beta_a, double *out);

// Saleh AM/PM response in radians at input amplitude `r`.
//
// # Safety
// `out` must be NULL or a valid pointer.
enum MdStatus md_saleh_ampm(double r, double alpha_phi, double beta_phi, double *out);

// Per-sample FLOPs of a DPD bank: `(4K + 2) Q N_t`.
//
// # Safety
// `out` must be NULL or a valid pointer.
enum MdStatus md_flops(size_t order, size_t memory_depth, size_t num_antennas, uint64_t *out);

// FLOPs saved by order `k_prop` against `k_conv`.
//
// # Safety
// `out` must be NULL or a valid pointer.
enum MdStatus md_flop_savings(size_t k_conv,
                              size_t k_prop,
                              size_t memory_depth,
                              size_t num_antennas,
                              uint64_t *out);

// Builds a polynomial of order `order` and memory depth `memory_depth` from
// `order * (memory_depth + 1)` coefficients in k-major order.
//
// # Safety
// `coeffs` must be valid for `len` reads and `out` for one write.
enum MdStatus md_mp_new(size_t order,
                        size_t memory_depth,
                        const struct MdComplex *coeffs,
                        size_t len,
                        struct MdMemoryPolynomial **out);

// Releases a polynomial. `NULL` is ignored.
//
// # Safety
// `h` must be NULL or a handle from this library not yet freed.
void md_mp_free(struct MdMemoryPolynomial *h);

// Number of coefficients, or 0 for `NULL`.
//
// # Safety
// `h` must be NULL or a live handle.
size_t md_mp_num_coeffs(const struct MdMemoryPolynomial *h);

// Copies the coefficients into `out`, which holds `len` entries.
//
// # Safety
// `h` must be a live handle and `out` valid for `len` writes.
enum MdStatus md_mp_coeffs(const struct MdMemoryPolynomial *h, struct MdComplex *out, size_t len);

// Applies the polynomial to `n` samples of `x`, writing `n` samples to `y`.
//
// # Safety
// `h` must be a live handle; `x` and `y` valid for `n` elements.
enum MdStatus md_mp_apply(const struct MdMemoryPolynomial *h,
                          const struct MdComplex *x,
                          struct MdComplex *y,
                          size_t n);

// Least-squares identification of `y ≈ MP(x)` over `n` samples. The
// condition estimate of the regression is written to `condition` when it is
// not NULL.
//
// # Safety
// `x` and `y` must be valid for `n` reads, `out` for one write, and
// `condition` NULL or valid.
enum MdStatus md_ls_fit(const struct MdComplex *x,
                        const struct MdComplex *y,
                        size_t n,
                        size_t order,
                        size_t memory_depth,
                        struct MdMemoryPolynomial **out,
                        double *condition);

// Zero-forcing precoder of a row-major `num_users x num_antennas` channel.
// Writes the row-major `num_antennas x num_users` precoder to `p`, and the
// Frobenius residual `||H P - I||` to `residual` when it is not NULL.
//
// # Safety
// `h` must hold `num_users * num_antennas` entries, `p` room for as many,
// and `residual` must be NULL or valid.
enum MdStatus md_zf_pinv(const struct MdComplex *h,
                         size_t num_users,
                         size_t num_antennas,
                         struct MdComplex *p,
                         double *residual);

// Parses and validates a scenario from TOML text.
//
// # Safety
// `toml` must be a NUL-terminated string and `out` valid for one write.
enum MdStatus md_scenario_from_toml(const char *toml, struct MdScenario **out);

// Releases a scenario. `NULL` is ignored.
//
// # Safety
// `h` must be NULL or a handle from this library not yet freed.
void md_scenario_free(struct MdScenario *h);

// Trains and evaluates one scheme. `kind` is `"no_dpd"`, `"conventional"`
// or `"proposed"`; `order` is ignored for `"no_dpd"`.
//
// # Safety
// `h` must be a live handle, `kind` a NUL-terminated string and `out`
// valid for one write.
enum MdStatus md_scenario_evaluate(const struct MdScenario *h,
                                   const char *kind,
                                   size_t order,
                                   struct MdMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MIMO_DPD_H */
