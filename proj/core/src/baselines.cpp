#include "pnpda/baselines.hpp"

#include <cmath>
#include <string>

#include "pnpda/errors.hpp"

namespace pnpda {

double gaspari_cohn(double r, double c) {
  const double z = std::abs(r) / c;
  if (z >= 2.0) return 0.0;
  const double z2 = z * z;
  const double z3 = z2 * z;
  const double z4 = z3 * z;
  const double z5 = z4 * z;
  if (z <= 1.0) {
    return -0.25 * z5 + 0.5 * z4 + 0.625 * z3 - 5.0 / 3.0 * z2 + 1.0;
  }
  return z5 / 12.0 - 0.5 * z4 + 0.625 * z3 + 5.0 / 3.0 * z2 - 5.0 * z + 4.0 -
         2.0 / (3.0 * z);
}

SpdMatrix build_B(int dim, const GaspariCohnSpec& spec) {
  if (dim < 1) throw ConfigError("build_B: dim must be >= 1");
  if (spec.length_scale <= 0.0 || spec.variance <= 0.0) {
    throw ConfigError("build_B: length_scale and variance must be > 0");
  }
  Matrix b(dim, dim);
  for (int i = 0; i < dim; ++i) {
    for (int j = 0; j < dim; ++j) {
      double dist = std::abs(i - j);
      if (spec.topology == Topology::cyclic) {
        dist = std::min(dist, static_cast<double>(dim) - dist);
      }
      b(i, j) = spec.variance * gaspari_cohn(dist, spec.length_scale);
    }
  }
  SpdMatrix B{b};
  try {
    B.cholesky_lower();
    return B;
  } catch (const CholeskyFailure&) {
    b.diagonal().array() += 1e-10;
    SpdMatrix jittered{b};
    try {
      jittered.cholesky_lower();
    } catch (const CholeskyFailure&) {
      throw NotPsd("build_B: matrix not positive definite even after jitter");
    }
    return jittered;
  }
}

Vector Ensemble::mean() const {
  Vector m = Vector::Zero(dim());
  for (const auto& x : members) m += x;
  return m / static_cast<double>(size());
}

Vector threedvar_analysis(const Vector& xb, const Vector& y,
                          const ObservationSpec& spec, const SpdMatrix& B) {
  const int m = spec.obs_dim();
  const int d = static_cast<int>(xb.size());
  // H is component selection: B H^T picks columns, H B H^T the sub-block.
  Matrix BHt(d, m);
  Matrix HBHt(m, m);
  for (int j = 0; j < m; ++j) BHt.col(j) = B.matrix().col(spec.indices[j]);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      HBHt(i, j) = B.matrix()(spec.indices[i], spec.indices[j]);
    }
  }
  Matrix S = HBHt + spec.noise_cov.matrix();
  Vector innovation = y - observe(xb, spec);
  Vector w = spd_solve(SpdMatrix{0.5 * (S + S.transpose())}, innovation);
  return xb + BHt * w;
}

Ensemble enkf_analysis(const Ensemble& ens, const Vector& y,
                       const ObservationSpec& spec, RngStream& rng) {
  const int n = ens.size();
  if (n < 2) throw TooFewMembers("enkf_analysis: need at least 2 members");
  const int d = ens.dim();
  const int m = spec.obs_dim();

  // Perturbed observations, one per member, drawn before the gain so the
  // draw order is independent of the linear algebra.
  MvnSampler noise(spec.noise_cov);
  std::vector<Vector> y_pert(n);
  for (int i = 0; i < n; ++i) y_pert[i] = noise.sample(rng, y);

  SpdMatrix B = ensemble_covariance(ens.members);
  Matrix BHt(d, m);
  Matrix HBHt(m, m);
  for (int j = 0; j < m; ++j) BHt.col(j) = B.matrix().col(spec.indices[j]);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      HBHt(i, j) = B.matrix()(spec.indices[i], spec.indices[j]);
    }
  }
  Matrix S = HBHt + spec.noise_cov.matrix();
  // K = B H^T S^{-1}; solve S X = (B H^T)^T instead of inverting.
  Matrix K = spd_solve(SpdMatrix{0.5 * (S + S.transpose())},
                       Matrix(BHt.transpose()))
                 .transpose();

  Ensemble out;
  out.members.resize(n);
  for (int i = 0; i < n; ++i) {
    Vector innovation = y_pert[i] - observe(ens.members[i], spec);
    out.members[i] = ens.members[i] + K * innovation;
  }
  return out;
}

Ensemble enrda_analysis(const Ensemble& ens, const Vector& y,
                        const SpdMatrix& sigma_obs_cov, double gamma,
                        int n_iter, RngStream& rng) {
  const int n = ens.size();
  if (n < 2) throw TooFewMembers("enrda_analysis: need at least 2 members");
  if (sigma_obs_cov.dim() != ens.dim()) {
    throw ConfigError("enrda_analysis: requires full-state observations");
  }

  MvnSampler noise(sigma_obs_cov);
  std::vector<Vector> y_pert(n);
  for (int i = 0; i < n; ++i) y_pert[i] = noise.sample(rng, y);

  SpdMatrix B = ensemble_covariance(ens.members);
  const double tr_obs = sigma_obs_cov.trace();
  const double eta = tr_obs / (tr_obs + B.trace());

  Matrix cost(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      cost(i, j) = (ens.members[i] - y_pert[j]).squaredNorm();
    }
  }
  TransportPlan plan = sinkhorn_plan(cost, gamma, n_iter);
  for (int i = 0; i < n; ++i) {
    if (plan.weights.row(i).maxCoeff() <= 0.0) {
      throw DegeneratePlan("enrda_analysis: transport plan row " +
                           std::to_string(i) + " is all zero");
    }
  }

  // One joint categorical draw over all N^2 normalized plan entries per
  // output member, scanned in row-major order.
  const double total = plan.weights.sum();
  Ensemble out;
  out.members.resize(n);
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform() * total;
    double acc = 0.0;
    int src = n - 1, tgt = n - 1;
    bool found = false;
    for (int a = 0; a < n && !found; ++a) {
      for (int b = 0; b < n; ++b) {
        acc += plan.weights(a, b);
        if (acc >= u) {
          src = a;
          tgt = b;
          found = true;
          break;
        }
      }
    }
    out.members[i] = eta * ens.members[src] + (1.0 - eta) * y_pert[tgt];
  }
  return out;
}

}  // namespace pnpda
