#pragma once

#include <functional>
#include <vector>

#include "pnpda/dynamics.hpp"
#include "pnpda/flowmatch.hpp"
#include "pnpda/observations.hpp"

namespace pnpda {

struct PnpConfig {
  int n_iter = 100;
  double alpha = 0.5;     // gamma_n = step_scale * (1 - tau_n)^alpha
  int n_samples = 1;      // ensemble draws per analysis
  double step_scale = 0.0;  // 0 = auto: inverse curvature of the misfit in
                            // normalized coordinates
  bool blend_noise = true;  // diagnostic switch: false replaces the
                            // stochastic blend by w itself (pure gradient path)
};

// Flow-based denoiser in physical coordinates:
// D_tau(x^b, x) = x + (1-tau) * v_theta(x^b, x, tau), with the network
// evaluated in normalized space and the velocity mapped back. D_1 is the
// identity exactly.
Vector denoise(const Checkpoint& model, const Vector& xb, const Vector& x,
               double tau);

// One PnP analysis: alternate a misfit gradient step, a stochastic blend
// toward the flow path, and a denoiser forward pass over the uniform
// pseudo-time grid tau_n = n/n_iter. Falls back to xb on numerical failure
// (flag reported through `fallback` when non-null).
Vector analyze_3d(const Checkpoint& model, const Vector& xb, const Vector& y,
                  const ObservationSpec& spec, const PnpConfig& cfg,
                  RngStream& rng, bool* fallback = nullptr);

// Deterministic stepper with hand-coded transpose-Jacobian products, used
// for 4D misfit gradients.
struct AdjointModel {
  DriftFn drift;
  // out = J(x)^T v for the drift Jacobian J at state x.
  std::function<void(const Vector&, const Vector&, Vector&)> jacobian_tvp;
  double dt = 0.0;
};

AdjointModel adjoint_l63(const L63Params& p, double dt);
AdjointModel adjoint_l96_single(double F_prime, double dt);

struct WindowObservation {
  int steps_from_start;  // model steps between the window start and this obs
  Vector y;
  ObservationSpec spec;
};

struct WindowSpec {
  AdjointModel model;
  std::vector<WindowObservation> obs;  // at least one, steps ascending
};

// J(x0) = sum_i 0.5 ||y_i - H_i M_{0->i}(x0)||^2_{P_i^-1}.
double misfit_4d(const Vector& x0, const WindowSpec& win);

// Exact gradient of misfit_4d via the discrete adjoint of the RK4 chain
// (store-all checkpointing of the step-start states).
Vector misfit_gradient_4d(const Vector& x0, const WindowSpec& win);

// Algorithm identical to analyze_3d with the window misfit gradient.
Vector analyze_4d(const Checkpoint& model, const Vector& xb,
                  const WindowSpec& win, const PnpConfig& cfg, RngStream& rng,
                  bool* fallback = nullptr);

struct EnsembleAnalysis {
  Vector mean;
  std::vector<Vector> members;  // surviving members only
  int n_failed = 0;
};

// cfg.n_samples independent analyze_3d draws (per-member child streams);
// throws NonFiniteState if every member fails.
EnsembleAnalysis analyze_ensemble(const Checkpoint& model, const Vector& xb,
                                  const Vector& y, const ObservationSpec& spec,
                                  const PnpConfig& cfg, RngStream& rng);

}  // namespace pnpda
