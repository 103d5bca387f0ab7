#pragma once

#include <vector>

#include "pnpda/dynamics.hpp"
#include "pnpda/linalg.hpp"

namespace pnpda {

// Linear component-selection observation operator plus its noise covariance.
// Nonlinear operators are out of scope; the selection case is the extension
// point for them.
struct ObservationSpec {
  std::vector<int> indices;  // sorted, unique, within state dimension
  SpdMatrix noise_cov;       // dim = indices.size()

  ObservationSpec(std::vector<int> idx, SpdMatrix cov);
  int obs_dim() const { return static_cast<int>(indices.size()); }
};

struct ObservationBatch {
  std::vector<double> times;
  Matrix values;  // row k = observation at times[k]
  ObservationSpec spec;

  int size() const { return static_cast<int>(times.size()); }
};

// m/2m equally spread selection indices on {0..dim-1}: floor((2i+1)*dim/(2m)).
std::vector<int> equally_spaced_indices(int dim, int m);

// Selected components of x in index order.
Vector observe(const Vector& x, const ObservationSpec& spec);

// Hx scattered back into a zero state vector.
Vector scatter(const Vector& y_like, const ObservationSpec& spec, int dim);

// Noisy observations of the truth every `every_n` steps, starting at the
// every_n-th recorded state (the initial condition is not observed).
ObservationBatch make_observations(const Trajectory& truth,
                                   const ObservationSpec& spec, int every_n,
                                   RngStream& rng);

// 0.5 (y - Hx)^T P^{-1} (y - Hx), via Cholesky solve (no explicit inverse).
double misfit(const Vector& x, const Vector& y, const ObservationSpec& spec);

// H^T P^{-1} (Hx - y) scattered into state dimension; unobserved components
// get exact zeros.
Vector misfit_gradient(const Vector& x, const Vector& y,
                       const ObservationSpec& spec);

}  // namespace pnpda
