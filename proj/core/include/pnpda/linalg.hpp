#pragma once

#include <Eigen/Dense>
#include <vector>

#include "pnpda/errors.hpp"
#include "pnpda/rng.hpp"

namespace pnpda {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Dense symmetric matrix. Symmetry is validated at construction (1e-12
// relative tolerance); positive definiteness is checked wherever a Cholesky
// factor is required, so PSD-but-singular matrices (e.g. zero ensemble
// spread) can still be stored and inspected.
class SpdMatrix {
 public:
  explicit SpdMatrix(Matrix m);

  static SpdMatrix identity(int dim);
  static SpdMatrix diagonal(const Vector& diag);
  static SpdMatrix scaled_identity(int dim, double value);

  int dim() const { return static_cast<int>(m_.rows()); }
  const Matrix& matrix() const { return m_; }
  double trace() const { return m_.trace(); }

  // Lower Cholesky factor; throws CholeskyFailure if not positive definite.
  Matrix cholesky_lower() const;

 private:
  Matrix m_;
};

// Solves a x = b for SPD a via Cholesky. Relative residual <= 1e-10 for
// well-conditioned inputs (all covariances here are <= 160x160).
Vector spd_solve(const SpdMatrix& a, const Vector& b);
Matrix spd_solve(const SpdMatrix& a, const Matrix& b);

// mean + L z with L the Cholesky factor of cov and z i.i.d. standard normal.
Vector sample_mvn(RngStream& rng, const Vector& mean, const SpdMatrix& cov);

// Caches the Cholesky factor for repeated draws from the same covariance.
class MvnSampler {
 public:
  explicit MvnSampler(const SpdMatrix& cov);
  Vector sample(RngStream& rng, const Vector& mean) const;
  int dim() const { return static_cast<int>(chol_.rows()); }

 private:
  Matrix chol_;
};

// Unbiased sample covariance, 1/(N-1) normalization. Throws TooFewMembers
// for N < 2. Result is symmetric PSD (symmetrized against rounding).
SpdMatrix ensemble_covariance(const std::vector<Vector>& members);

inline bool all_finite(const Vector& v) { return v.allFinite(); }

}  // namespace pnpda
