#pragma once

#include <vector>

#include "pnpda/linalg.hpp"
#include "pnpda/observations.hpp"
#include "pnpda/transport.hpp"

namespace pnpda {

enum class Topology { cyclic, bounded };

struct GaspariCohnSpec {
  double length_scale = 1.0;  // c; support ends at 2c
  double variance = 1.0;
  Topology topology = Topology::bounded;
};

// Fifth-order piecewise-rational compactly supported correlation; 1 at r=0,
// 0 for r >= 2c, C^2 in between.
double gaspari_cohn(double r, double c);

// B_ij = variance * gaspari_cohn(dist(i,j), c) with index distance cyclic or
// bounded. Adds a 1e-10 diagonal jitter once if the numerical Cholesky
// fails; throws NotPsd if it still fails.
SpdMatrix build_B(int dim, const GaspariCohnSpec& spec);

struct Ensemble {
  std::vector<Vector> members;

  int size() const { return static_cast<int>(members.size()); }
  int dim() const { return members.empty() ? 0 : static_cast<int>(members[0].size()); }
  Vector mean() const;
};

// Kalman-form analytic 3D-Var analysis,
// x^a = x^b + B H^T (H B H^T + P)^{-1} (y - H x^b).
Vector threedvar_analysis(const Vector& xb, const Vector& y,
                          const ObservationSpec& spec, const SpdMatrix& B);

// Perturbed-observation EnKF analysis step; gain from the unbiased ensemble
// covariance, each member assimilating its own perturbed observation.
Ensemble enkf_analysis(const Ensemble& ens, const Vector& y,
                       const ObservationSpec& spec, RngStream& rng);

// Ensemble Riemannian DA analysis (full-state observations): entropic OT
// plan between background members and perturbed observations, then a mixture
// update x^a_i = eta x^b_{I_i} + (1-eta) y^{J_i} with
// eta = tr(Sigma_obs) / (tr(Sigma_obs) + tr(B)) and (I_i, J_i) drawn jointly
// from the normalized plan.
Ensemble enrda_analysis(const Ensemble& ens, const Vector& y,
                        const SpdMatrix& sigma_obs_cov, double gamma,
                        int n_iter, RngStream& rng);

}  // namespace pnpda
