#pragma once

#include <functional>
#include <vector>

#include "pnpda/linalg.hpp"
#include "pnpda/rng.hpp"

namespace pnpda {

struct L63Params {
  double sigma = 10.0;
  double rho = 28.0;
  double beta = 8.0 / 3.0;
};

inline L63Params l63_true_params() { return {10.0, 28.0, 8.0 / 3.0}; }
inline L63Params l63_operational_params() { return {10.5, 27.0, 10.0 / 3.0}; }

struct L96Params {
  int K = 8;   // slow variables
  int J = 32;  // fast variables per slow variable
  double F = 18.0;
  double h = 1.0;
  double b = 10.0;
  double c = 10.0;
  double F_prime = 18.0;  // single-scale (operational) forcing
};

struct KsParams {
  double nu = 0.5;
  double L = 50.0;
  int n_grid = 128;          // interior points, Dirichlet u=0 at both ends
  double dt_record = 0.25;
  double dt_internal = 0.0;  // 0 = derive from the explicit stability bound
};

// Grid spacing for the interior-point discretization, dx = L/(n_grid+1).
double ks_dx(const KsParams& p);
// Explicit RK4 sub-step bound: min(1e-3, 0.5*dx^4/(8*nu)).
double ks_stable_internal_dt(const KsParams& p);
// Sub-steps per recorded step so that substeps * dt_int == dt_record exactly.
int ks_substeps(const KsParams& p);

struct Trajectory {
  std::vector<double> times;
  Matrix states;  // row i = state at times[i]

  int dim() const { return static_cast<int>(states.cols()); }
  int size() const { return static_cast<int>(states.rows()); }
};

// --- drift right-hand sides ---

Vector l63_drift(const Vector& x, const L63Params& p);

// Slow/fast tendencies of the two-scale system. Slow index k is cyclic mod K;
// fast variables are cyclic on the flattened index j + J*k mod (J*K).
void l96_two_scale_drift(const Vector& X, const Vector& Y, const L96Params& p,
                         Vector& dX, Vector& dY);

Vector l96_single_drift(const Vector& X, double F_prime);

// Finite-difference KS right-hand side: -u u_x - u_xx - nu u_xxxx with
// second-order central stencils and two zero ghost points beyond each
// Dirichlet boundary.
Vector ks_rhs(const Vector& u, const KsParams& p);

// --- drift functors (stateless except preallocated scratch; construct one
// per thread) ---

class L63Model {
 public:
  explicit L63Model(L63Params p) : p_(p) {}
  void operator()(const Vector& x, Vector& dxdt) const;
  const L63Params& params() const { return p_; }

 private:
  L63Params p_;
};

// Two-scale model on the flattened state [X; Y] of dimension K + J*K.
class L96TwoScaleModel {
 public:
  explicit L96TwoScaleModel(L96Params p) : p_(p) {}
  void operator()(const Vector& xy, Vector& dxydt) const;
  const L96Params& params() const { return p_; }

 private:
  L96Params p_;
};

class L96SingleModel {
 public:
  explicit L96SingleModel(double F_prime) : F_prime_(F_prime) {}
  void operator()(const Vector& x, Vector& dxdt) const;

 private:
  double F_prime_;
};

class KsModel {
 public:
  explicit KsModel(KsParams p);
  void operator()(const Vector& u, Vector& dudt) const;
  const KsParams& params() const { return p_; }

 private:
  KsParams p_;
  double dx_;
  mutable Vector pad_;  // interior + 2 ghost points per side
};

// --- time integration ---

using DriftFn = std::function<void(const Vector&, Vector&)>;

Vector rk4_step(const DriftFn& drift, const Vector& x, double dt);

struct Rk4Scratch {
  Vector k1, k2, k3, k4, stage;
  void resize(Eigen::Index d);
};

void rk4_step_into(const DriftFn& drift, const Vector& x, double dt,
                   Vector& out, Rk4Scratch& scratch);

// Iterates RK4, optionally splitting each recorded step into `substeps`
// internal sub-steps (stiff KS stencil), and adds N(0, sigma^2 I) noise after
// each recorded step when sigma > 0. Records every step including x0. Throws
// NonFiniteState on blow-up.
Trajectory integrate(const DriftFn& drift, const Vector& x0, int n_steps,
                     double dt, double process_noise_std, RngStream& rng,
                     int substeps = 1, double t0 = 0.0);

// Per-component noise standard deviations (size 0 = no noise).
Trajectory integrate(const DriftFn& drift, const Vector& x0, int n_steps,
                     double dt, const Vector& process_noise_std,
                     RngStream& rng, int substeps = 1, double t0 = 0.0);

// Steps a state forward n_steps without recording the intermediate states;
// same noise placement as integrate().
void advance(const DriftFn& drift, Vector& x, int n_steps, double dt,
             double process_noise_std, RngStream& rng, int substeps = 1);

}  // namespace pnpda
