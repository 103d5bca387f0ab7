#include "pnpda/transport.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "pnpda/errors.hpp"

namespace pnpda {

double TransportPlan::max_row_marginal_error() const {
  const double target = 1.0 / static_cast<double>(weights.rows());
  return (weights.rowwise().sum().array() - target).abs().maxCoeff();
}

double TransportPlan::max_col_marginal_error() const {
  const double target = 1.0 / static_cast<double>(weights.cols());
  return (weights.colwise().sum().array() - target).abs().maxCoeff();
}

double assignment_cost(const Matrix& cost, const Assignment& a) {
  double total = 0.0;
  for (int i = 0; i < static_cast<int>(a.perm.size()); ++i) {
    total += cost(i, a.perm[i]);
  }
  return total;
}

namespace {

inline double logsumexp_row(const Vector& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

}  // namespace

TransportPlan sinkhorn_plan(const Matrix& cost, double gamma, int n_iter) {
  if (gamma <= 0.0) throw ConfigError("sinkhorn_plan: gamma must be > 0");
  if (n_iter < 1) throw ConfigError("sinkhorn_plan: n_iter must be >= 1");
  if (!cost.allFinite() || cost.minCoeff() < 0.0) {
    throw ConfigError("sinkhorn_plan: cost must be finite and nonnegative");
  }
  const Eigen::Index n = cost.rows();
  const Eigen::Index m = cost.cols();
  const double log_a = -std::log(static_cast<double>(n));
  const double log_b = -std::log(static_cast<double>(m));

  Matrix neg_gc = -gamma * cost;  // log Gibbs kernel
  Vector f = Vector::Zero(n);
  Vector g = Vector::Zero(m);
  Vector tmp;
  for (int it = 0; it < n_iter; ++it) {
    for (Eigen::Index i = 0; i < n; ++i) {
      tmp = neg_gc.row(i).transpose() + g;
      f[i] = log_a - logsumexp_row(tmp);
    }
    for (Eigen::Index j = 0; j < m; ++j) {
      tmp = neg_gc.col(j) + f;
      g[j] = log_b - logsumexp_row(tmp);
    }
  }
  if (!f.allFinite() || !g.allFinite()) {
    throw NumericalUnderflow("sinkhorn_plan: potentials became non-finite");
  }

  TransportPlan plan;
  plan.weights.resize(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      plan.weights(i, j) = std::exp(f[i] + g[j] + neg_gc(i, j));
    }
  }
  return plan;
}

Assignment emd_assignment(const Matrix& cost) {
  if (cost.rows() != cost.cols()) {
    throw ConfigError("emd_assignment: cost matrix must be square");
  }
  if (!cost.allFinite()) {
    throw ConfigError("emd_assignment: cost must be finite");
  }
  const int n = static_cast<int>(cost.rows());
  const double inf = std::numeric_limits<double>::infinity();

  // Kuhn-Munkres with dual potentials, 1-based bookkeeping; column scans go
  // in ascending index order, so cost ties resolve to the lowest target index.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> match(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = match[j0];
      int j1 = 0;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  Assignment a;
  a.perm.assign(n, -1);
  for (int j = 1; j <= n; ++j) {
    if (match[j] != 0) a.perm[match[j] - 1] = j - 1;
  }
  return a;
}

Matrix augmented_cost(const Matrix& z0, const Matrix& xb, const Matrix& xa,
                      double beta) {
  const Eigen::Index n = z0.rows();
  if (xb.rows() != n || xa.rows() != n) {
    throw ConfigError("augmented_cost: batch sizes must match");
  }
  if (beta < 0.0) throw ConfigError("augmented_cost: beta must be >= 0");
  Matrix c(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double transport = (z0.row(i) - xa.row(j)).squaredNorm();
      const double penalty = (xb.row(i) - xb.row(j)).squaredNorm();
      c(i, j) = transport + beta * penalty;
    }
  }
  return c;
}

}  // namespace pnpda
