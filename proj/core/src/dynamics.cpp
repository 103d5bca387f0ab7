#include "pnpda/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pnpda/errors.hpp"

namespace pnpda {

namespace {

// Shared slow-variable advection so the two-scale drift with h=0 agrees
// bit-for-bit with the single-scale drift.
inline double l96_slow_term(const double* X, int k, int K, double F) {
  const double xm1 = X[(k - 1 + K) % K];
  const double xm2 = X[(k - 2 + K) % K];
  const double xp1 = X[(k + 1) % K];
  return -xm1 * (xm2 - xp1) - X[k] + F;
}

}  // namespace

double ks_dx(const KsParams& p) { return p.L / (p.n_grid + 1); }

double ks_stable_internal_dt(const KsParams& p) {
  if (p.dt_internal > 0.0) return p.dt_internal;
  const double dx = ks_dx(p);
  return std::min(1e-3, 0.5 * dx * dx * dx * dx / (8.0 * p.nu));
}

int ks_substeps(const KsParams& p) {
  const double bound = ks_stable_internal_dt(p);
  return static_cast<int>(std::ceil(p.dt_record / bound - 1e-12));
}

Vector l63_drift(const Vector& x, const L63Params& p) {
  Vector d(3);
  L63Model{p}(x, d);
  return d;
}

void L63Model::operator()(const Vector& x, Vector& dxdt) const {
  dxdt.resize(3);
  dxdt[0] = -p_.sigma * (x[0] - x[1]);
  dxdt[1] = p_.rho * x[0] - x[1] - x[0] * x[2];
  dxdt[2] = x[0] * x[1] - p_.beta * x[2];
}

void l96_two_scale_drift(const Vector& X, const Vector& Y, const L96Params& p,
                         Vector& dX, Vector& dY) {
  const int K = p.K;
  const int J = p.J;
  const int n_fast = J * K;
  dX.resize(K);
  dY.resize(n_fast);

  const double coupling = p.h * p.c / p.b;
  for (int k = 0; k < K; ++k) {
    double fast_sum = 0.0;
    for (int j = 0; j < J; ++j) fast_sum += Y[j + J * k];
    dX[k] = l96_slow_term(X.data(), k, K, p.F) - coupling * fast_sum;
  }
  const double cb = p.c * p.b;
  for (int m = 0; m < n_fast; ++m) {
    const double yp1 = Y[(m + 1) % n_fast];
    const double yp2 = Y[(m + 2) % n_fast];
    const double ym1 = Y[(m - 1 + n_fast) % n_fast];
    const int k = m / J;
    dY[m] = -cb * yp1 * (yp2 - ym1) - p.c * Y[m] + coupling * X[k];
  }
}

Vector l96_single_drift(const Vector& X, double F_prime) {
  const int K = static_cast<int>(X.size());
  Vector d(K);
  for (int k = 0; k < K; ++k) d[k] = l96_slow_term(X.data(), k, K, F_prime);
  return d;
}

void L96TwoScaleModel::operator()(const Vector& xy, Vector& dxydt) const {
  const int K = p_.K;
  const int J = p_.J;
  const int n_fast = J * K;
  dxydt.resize(K + n_fast);
  const double* X = xy.data();
  const double* Y = xy.data() + K;

  const double coupling = p_.h * p_.c / p_.b;
  for (int k = 0; k < K; ++k) {
    double fast_sum = 0.0;
    for (int j = 0; j < J; ++j) fast_sum += Y[j + J * k];
    dxydt[k] = l96_slow_term(X, k, K, p_.F) - coupling * fast_sum;
  }
  const double cb = p_.c * p_.b;
  for (int m = 0; m < n_fast; ++m) {
    const double yp1 = Y[(m + 1) % n_fast];
    const double yp2 = Y[(m + 2) % n_fast];
    const double ym1 = Y[(m - 1 + n_fast) % n_fast];
    dxydt[K + m] = -cb * yp1 * (yp2 - ym1) - p_.c * Y[m] + coupling * X[m / J];
  }
}

void L96SingleModel::operator()(const Vector& x, Vector& dxdt) const {
  const int K = static_cast<int>(x.size());
  dxdt.resize(K);
  for (int k = 0; k < K; ++k) dxdt[k] = l96_slow_term(x.data(), k, K, F_prime_);
}

KsModel::KsModel(KsParams p) : p_(p), dx_(ks_dx(p)), pad_(p.n_grid + 4) {}

void KsModel::operator()(const Vector& u, Vector& dudt) const {
  const int n = p_.n_grid;
  dudt.resize(n);
  pad_.setZero();
  pad_.segment(2, n) = u;

  const double inv_2dx = 1.0 / (2.0 * dx_);
  const double inv_dx2 = 1.0 / (dx_ * dx_);
  const double inv_dx4 = inv_dx2 * inv_dx2;
  for (int i = 0; i < n; ++i) {
    const double um2 = pad_[i];
    const double um1 = pad_[i + 1];
    const double u0 = pad_[i + 2];
    const double up1 = pad_[i + 3];
    const double up2 = pad_[i + 4];
    const double ux = (up1 - um1) * inv_2dx;
    const double uxx = (up1 - 2.0 * u0 + um1) * inv_dx2;
    const double uxxxx = (um2 - 4.0 * um1 + 6.0 * u0 - 4.0 * up1 + up2) * inv_dx4;
    dudt[i] = -u0 * ux - uxx - p_.nu * uxxxx;
  }
}

Vector ks_rhs(const Vector& u, const KsParams& p) {
  Vector d;
  KsModel{p}(u, d);
  return d;
}

void Rk4Scratch::resize(Eigen::Index d) {
  k1.resize(d);
  k2.resize(d);
  k3.resize(d);
  k4.resize(d);
  stage.resize(d);
}

void rk4_step_into(const DriftFn& drift, const Vector& x, double dt,
                   Vector& out, Rk4Scratch& s) {
  s.resize(x.size());
  drift(x, s.k1);
  s.stage = x + (0.5 * dt) * s.k1;
  drift(s.stage, s.k2);
  s.stage = x + (0.5 * dt) * s.k2;
  drift(s.stage, s.k3);
  s.stage = x + dt * s.k3;
  drift(s.stage, s.k4);
  out = x + (dt / 6.0) * (s.k1 + 2.0 * s.k2 + 2.0 * s.k3 + s.k4);
}

Vector rk4_step(const DriftFn& drift, const Vector& x, double dt) {
  Rk4Scratch s;
  Vector out;
  rk4_step_into(drift, x, dt, out, s);
  return out;
}

namespace {

Trajectory integrate_impl(const DriftFn& drift, const Vector& x0, int n_steps,
                          double dt, const Vector* noise_std_vec,
                          double noise_std_scalar, RngStream& rng,
                          int substeps, double t0) {
  if (n_steps < 1) throw ConfigError("integrate: n_steps must be >= 1");
  if (substeps < 1) throw ConfigError("integrate: substeps must be >= 1");
  const Eigen::Index d = x0.size();
  const bool vec_noise = noise_std_vec != nullptr && noise_std_vec->size() > 0;
  const bool has_noise = vec_noise || noise_std_scalar > 0.0;
  const double sub_dt = dt / substeps;

  Trajectory traj;
  traj.times.resize(n_steps + 1);
  traj.states.resize(n_steps + 1, d);
  traj.times[0] = t0;
  traj.states.row(0) = x0.transpose();

  Rk4Scratch scratch;
  Vector x = x0;
  Vector next(d);
  for (int step = 1; step <= n_steps; ++step) {
    for (int s = 0; s < substeps; ++s) {
      rk4_step_into(drift, x, sub_dt, next, scratch);
      x.swap(next);
    }
    if (has_noise) {
      for (Eigen::Index i = 0; i < d; ++i) {
        const double std_i = vec_noise ? (*noise_std_vec)[i] : noise_std_scalar;
        x[i] += std_i * rng.normal();
      }
    }
    if (!x.allFinite()) {
      throw NonFiniteState("integrate: non-finite state at step " +
                           std::to_string(step));
    }
    traj.times[step] = t0 + step * dt;
    traj.states.row(step) = x.transpose();
  }
  return traj;
}

}  // namespace

Trajectory integrate(const DriftFn& drift, const Vector& x0, int n_steps,
                     double dt, double process_noise_std, RngStream& rng,
                     int substeps, double t0) {
  return integrate_impl(drift, x0, n_steps, dt, nullptr, process_noise_std,
                        rng, substeps, t0);
}

Trajectory integrate(const DriftFn& drift, const Vector& x0, int n_steps,
                     double dt, const Vector& process_noise_std,
                     RngStream& rng, int substeps, double t0) {
  return integrate_impl(drift, x0, n_steps, dt, &process_noise_std, 0.0, rng,
                        substeps, t0);
}

void advance(const DriftFn& drift, Vector& x, int n_steps, double dt,
             double process_noise_std, RngStream& rng, int substeps) {
  const double sub_dt = dt / substeps;
  Rk4Scratch scratch;
  Vector next(x.size());
  for (int step = 1; step <= n_steps; ++step) {
    for (int s = 0; s < substeps; ++s) {
      rk4_step_into(drift, x, sub_dt, next, scratch);
      x.swap(next);
    }
    if (process_noise_std > 0.0) {
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        x[i] += process_noise_std * rng.normal();
      }
    }
    if (!x.allFinite()) {
      throw NonFiniteState("advance: non-finite state at step " +
                           std::to_string(step));
    }
  }
}

}  // namespace pnpda
