#pragma once

#include <vector>

#include "pnpda/linalg.hpp"

namespace pnpda {

// Coupling between uniform marginals 1/N and 1/M (the only case used here).
struct TransportPlan {
  Matrix weights;  // N x M, nonnegative

  double max_row_marginal_error() const;
  double max_col_marginal_error() const;
};

// Bijection mapping source index i to target index perm[i].
struct Assignment {
  std::vector<int> perm;
};

double assignment_cost(const Matrix& cost, const Assignment& a);

// Entropic-regularized plan between uniform marginals via log-domain Sinkhorn
// with Gibbs kernel exp(-gamma * C); larger gamma gives sharper plans. Runs
// exactly n_iter full row+column update sweeps.
TransportPlan sinkhorn_plan(const Matrix& cost, double gamma, int n_iter);

// Exact minimum-cost perfect assignment (Kuhn-Munkres with potentials,
// O(N^3)). For uniform equal-size marginals an extreme-point optimal plan is
// a permutation, so this solves the EMD problem exactly.
Assignment emd_assignment(const Matrix& cost);

// C_ij = ||z0_i - xa_j||^2 + beta * ||xb_i - xb_j||^2 over batch rows.
Matrix augmented_cost(const Matrix& z0, const Matrix& xb, const Matrix& xa,
                      double beta);

}  // namespace pnpda
