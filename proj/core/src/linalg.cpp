#include "pnpda/linalg.hpp"

#include <Eigen/Cholesky>
#include <string>

namespace pnpda {

SpdMatrix::SpdMatrix(Matrix m) : m_(std::move(m)) {
  if (m_.rows() != m_.cols() || m_.rows() == 0) {
    throw ConfigError("SpdMatrix: matrix must be square and non-empty");
  }
  double scale = m_.cwiseAbs().maxCoeff();
  double asym = (m_ - m_.transpose()).cwiseAbs().maxCoeff();
  if (scale > 0.0 && asym > 1e-12 * scale) {
    throw ConfigError("SpdMatrix: matrix is not symmetric (relative asymmetry " +
                      std::to_string(asym / scale) + ")");
  }
}

SpdMatrix SpdMatrix::identity(int dim) {
  return SpdMatrix(Matrix::Identity(dim, dim));
}

SpdMatrix SpdMatrix::diagonal(const Vector& diag) {
  return SpdMatrix(Matrix(diag.asDiagonal()));
}

SpdMatrix SpdMatrix::scaled_identity(int dim, double value) {
  return SpdMatrix(Matrix(value * Matrix::Identity(dim, dim)));
}

Matrix SpdMatrix::cholesky_lower() const {
  Eigen::LLT<Matrix> llt(m_);
  if (llt.info() != Eigen::Success) {
    throw CholeskyFailure("Cholesky factorization failed: matrix of dim " +
                          std::to_string(dim()) + " is not positive definite");
  }
  return llt.matrixL();
}

Vector spd_solve(const SpdMatrix& a, const Vector& b) {
  Eigen::LLT<Matrix> llt(a.matrix());
  if (llt.info() != Eigen::Success) {
    throw CholeskyFailure("spd_solve: matrix is not positive definite");
  }
  return llt.solve(b);
}

Matrix spd_solve(const SpdMatrix& a, const Matrix& b) {
  Eigen::LLT<Matrix> llt(a.matrix());
  if (llt.info() != Eigen::Success) {
    throw CholeskyFailure("spd_solve: matrix is not positive definite");
  }
  return llt.solve(b);
}

Vector sample_mvn(RngStream& rng, const Vector& mean, const SpdMatrix& cov) {
  if (mean.size() != cov.dim()) {
    throw ConfigError("sample_mvn: mean/covariance dimension mismatch");
  }
  Matrix chol = cov.cholesky_lower();
  Vector z(mean.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
  return mean + chol * z;
}

MvnSampler::MvnSampler(const SpdMatrix& cov) : chol_(cov.cholesky_lower()) {}

Vector MvnSampler::sample(RngStream& rng, const Vector& mean) const {
  Vector z(chol_.rows());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
  return mean + chol_ * z;
}

SpdMatrix ensemble_covariance(const std::vector<Vector>& members) {
  const int n = static_cast<int>(members.size());
  if (n < 2) {
    throw TooFewMembers("ensemble_covariance: need at least 2 members, got " +
                        std::to_string(n));
  }
  const Eigen::Index d = members[0].size();
  Vector mean = Vector::Zero(d);
  for (const auto& m : members) mean += m;
  mean /= static_cast<double>(n);

  Matrix centered(n, d);
  for (int i = 0; i < n; ++i) centered.row(i) = (members[i] - mean).transpose();
  Matrix cov = centered.transpose() * centered / static_cast<double>(n - 1);
  cov = 0.5 * (cov + cov.transpose());
  return SpdMatrix(std::move(cov));
}

}  // namespace pnpda
