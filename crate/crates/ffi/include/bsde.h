#ifndef BSDE_H
#define BSDE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible entry point.
typedef enum BsdeStatus {
  BSDE_STATUS_OK = 0,
  BSDE_STATUS_NULL_POINTER = 1,
  BSDE_STATUS_INVALID_ARGUMENT = 2,
  BSDE_STATUS_DOMAIN = 3,
  BSDE_STATUS_CONTRACTION_VIOLATION = 4,
  BSDE_STATUS_NON_CONVERGENCE = 5,
  BSDE_STATUS_SOLVER = 6,
  BSDE_STATUS_OUT_OF_RANGE = 7,
  BSDE_STATUS_PANIC = 8,
} BsdeStatus;

// Opaque driver handle.
typedef struct BsdeGenerator BsdeGenerator;

// Opaque lattice solution handle.
typedef struct BsdeSolution BsdeSolution;

// Opaque terminal condition handle.
typedef struct BsdeTerminal BsdeTerminal;

// Values at a lattice node.
typedef struct BsdeNode {
  double y;
  double z;
  // 0 active, 1 exited, 2 capped.
  int32_t status;
} BsdeNode;

// Result of a Picard run.
typedef struct BsdePicardResult {
  double y0;
  uint32_t iterations;
  double final_change;
  bool converged;
} BsdePicardResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *bsde_last_error_message(void);

// Builds a driver from a preset name such as `"sin-z"` or `"linear:-1,0,0.5"`.
//
// # Safety
// `spec` must be a valid NUL-terminated string and `out` a valid pointer.
enum BsdeStatus bsde_generator_from_preset(const char *spec, struct BsdeGenerator **out);

// Lipschitz constant recorded for the driver.
//
// # Safety
// `gen` must come from [`bsde_generator_from_preset`]; `out` must be valid.
enum BsdeStatus bsde_generator_lipschitz(const struct BsdeGenerator *gen, double *out);

// # Safety
// `gen` must be null or come from [`bsde_generator_from_preset`], and not be
// freed twice.
void bsde_generator_free(struct BsdeGenerator *gen);

// Builds a terminal condition from a preset name such as `"exp"` or
// `"constant:1"`.
//
// # Safety
// `spec` must be a valid NUL-terminated string and `out` a valid pointer.
enum BsdeStatus bsde_terminal_from_preset(const char *spec, struct BsdeTerminal **out);

// # Safety
// `g` must be null or come from [`bsde_terminal_from_preset`], and not be
// freed twice.
void bsde_terminal_free(struct BsdeTerminal *g);

// Backward solve on the stopped lattice with the aligned barrier.
//
// # Safety
// Handles must be live; `out` must be a valid pointer.
enum BsdeStatus bsde_lattice_solve(uint32_t n,
                                   double barrier,
                                   double cap,
                                   bool two_sided,
                                   const struct BsdeGenerator *gen,
                                   const struct BsdeTerminal *terminal,
                                   struct BsdeSolution **out);

// Value at the root node.
//
// # Safety
// `sol` must be live; `out` must be a valid pointer.
enum BsdeStatus bsde_solution_root_y(const struct BsdeSolution *sol, double *out);

// Number of time steps in the solution.
//
// # Safety
// `sol` must be live; `out` must be a valid pointer.
enum BsdeStatus bsde_solution_depth(const struct BsdeSolution *sol, size_t *out);

// Values at node `(k, j)`. Returns `OutOfRange` for nodes outside the
// stopped lattice.
//
// # Safety
// `sol` must be live; `out` must be a valid pointer.
enum BsdeStatus bsde_solution_node(const struct BsdeSolution *sol,
                                   size_t k,
                                   int64_t j,
                                   struct BsdeNode *out);

// # Safety
// `sol` must be null or come from [`bsde_lattice_solve`], and not be freed
// twice.
void bsde_solution_free(struct BsdeSolution *sol);

// Picard iteration on the stopped lattice, started from zero.
//
// # Safety
// Handles must be live; `out` must be a valid pointer.
enum BsdeStatus bsde_picard_solve(uint32_t n,
                                  double barrier,
                                  double cap,
                                  bool two_sided,
                                  const struct BsdeGenerator *gen,
                                  const struct BsdeTerminal *terminal,
                                  uint32_t p_max,
                                  double tol,
                                  struct BsdePicardResult *out);

// Value at 0 of the boundary value problem on `(-a, a)`.
//
// # Safety
// Handles must be live; `out` must be a valid pointer.
enum BsdeStatus bsde_bvp_u0(const struct BsdeGenerator *gen,
                            const struct BsdeTerminal *terminal,
                            double a,
                            size_t grid_size,
                            double *out);

// Lattice clock `floor(n t) / n`.
//
// # Safety
// `out` must be a valid pointer.
enum BsdeStatus bsde_clock_an(double t, uint32_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BSDE_H */
