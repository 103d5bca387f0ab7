#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "pnpda/rng.hpp"
#include "pnpda/transport.hpp"

using namespace pnpda;

namespace {

// Factorial enumeration oracle for the assignment problem.
double brute_force_min_cost(const Matrix& cost) {
  const int n = static_cast<int>(cost.rows());
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += cost(i, perm[i]);
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

Matrix random_matrix(int n, int m, RngStream& rng, double scale = 1.0) {
  Matrix out(n, m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) out(i, j) = scale * rng.uniform();
  return out;
}

}  // namespace

TEST_CASE("sinkhorn_plan: zero cost gives the uniform plan") {
  Matrix cost = Matrix::Zero(3, 4);
  TransportPlan plan = sinkhorn_plan(cost, 10.0, 50);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 4; ++j) {
      CHECK(plan.weights(i, j) == doctest::Approx(1.0 / 12).epsilon(1e-10));
    }
  }
}

TEST_CASE("sinkhorn_plan: near-exact regime recovers the permutation plan") {
  Matrix cost(2, 2);
  cost << 0.0, 1.0, 1.0, 0.0;
  // Exact OT oracle by enumeration: the diagonal coupling has cost 0.
  TransportPlan plan = sinkhorn_plan(cost, 200.0, 200);
  CHECK(plan.weights(0, 0) == doctest::Approx(0.5).epsilon(1e-8));
  CHECK(plan.weights(1, 1) == doctest::Approx(0.5).epsilon(1e-8));
  CHECK(plan.weights(0, 1) <= 1e-10);
  CHECK(plan.weights(1, 0) <= 1e-10);
}

TEST_CASE("sinkhorn_plan: marginals after 300 sweeps at gamma=10") {
  RngStream rng(1, 0);
  for (int trial = 0; trial < 10; ++trial) {
    Matrix cost = random_matrix(10, 10, rng);  // normalized to [0, 1]
    TransportPlan plan = sinkhorn_plan(cost, 10.0, 300);
    CHECK(plan.max_row_marginal_error() <= 1e-8);
    CHECK(plan.max_col_marginal_error() <= 1e-8);
  }
}

TEST_CASE("sinkhorn_plan: input validation") {
  Matrix bad(2, 2);
  bad << 0.0, -1.0, 1.0, 0.0;
  CHECK_THROWS(sinkhorn_plan(bad, 10.0, 10));
  CHECK_THROWS(sinkhorn_plan(Matrix::Zero(2, 2), -1.0, 10));
}

TEST_CASE("emd_assignment: zero diagonal picks the identity") {
  Matrix cost = Matrix::Ones(4, 4);
  cost.diagonal().setZero();
  Assignment a = emd_assignment(cost);
  for (int i = 0; i < 4; ++i) CHECK(a.perm[i] == i);
}

TEST_CASE("emd_assignment: monotone quadratic costs give the identity") {
  // Rearrangement bound, checked against enumeration at N=6.
  const int n = 6;
  Matrix cost(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) cost(i, j) = (i - j) * (i - j);
  Assignment a = emd_assignment(cost);
  for (int i = 0; i < n; ++i) CHECK(a.perm[i] == i);
  CHECK(assignment_cost(cost, a) == doctest::Approx(brute_force_min_cost(cost)));
}

TEST_CASE("emd_assignment: equals factorial brute force for N <= 6") {
  RngStream rng(2, 0);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform() * 5);  // 2..6
    Matrix cost(n, n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        cost(i, j) = std::floor(rng.uniform() * 20.0);  // integer costs
      }
    }
    Assignment a = emd_assignment(cost);
    // Must be a bijection.
    std::vector<int> seen(n, 0);
    for (int i = 0; i < n; ++i) seen[a.perm[i]] += 1;
    for (int i = 0; i < n; ++i) CHECK(seen[i] == 1);
    CHECK(assignment_cost(cost, a) ==
          doctest::Approx(brute_force_min_cost(cost)).epsilon(1e-12));
  }
}

TEST_CASE("emd_assignment: argmin invariant under row/column shifts") {
  RngStream rng(3, 0);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix cost = random_matrix(5, 5, rng, 10.0);
    Assignment base = emd_assignment(cost);
    Matrix shifted = cost;
    shifted.row(2).array() += 3.7;
    shifted.col(4).array() += 1.3;
    Assignment moved = emd_assignment(shifted);
    CHECK(assignment_cost(shifted, moved) ==
          doctest::Approx(assignment_cost(shifted, base)).epsilon(1e-12));
  }
}

TEST_CASE("augmented_cost: beta=0 is the plain transport cost") {
  RngStream rng(4, 0);
  Matrix z0 = random_matrix(5, 3, rng);
  Matrix xb = random_matrix(5, 3, rng);
  Matrix xa = random_matrix(5, 3, rng);
  Matrix c = augmented_cost(z0, xb, xa, 0.0);
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) {
      CHECK(c(i, j) ==
            doctest::Approx((z0.row(i) - xa.row(j)).squaredNorm()).epsilon(1e-14));
    }
  }
}

TEST_CASE("augmented_cost: diagonal carries no background penalty") {
  RngStream rng(5, 0);
  Matrix z0 = random_matrix(4, 2, rng);
  Matrix xb = random_matrix(4, 2, rng);
  Matrix xa = random_matrix(4, 2, rng);
  Matrix c = augmented_cost(z0, xb, xa, 1000.0);
  for (int i = 0; i < 4; ++i) {
    CHECK(c(i, i) ==
          doctest::Approx((z0.row(i) - xa.row(i)).squaredNorm()).epsilon(1e-14));
  }
}

TEST_CASE("augmented_cost: double-loop oracle") {
  RngStream rng(6, 0);
  Matrix z0 = random_matrix(6, 4, rng);
  Matrix xb = random_matrix(6, 4, rng);
  Matrix xa = random_matrix(6, 4, rng);
  const double beta = 37.5;
  Matrix c = augmented_cost(z0, xb, xa, beta);
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 6; ++j) {
      double expect = 0.0;
      for (int k = 0; k < 4; ++k) {
        expect += (z0(i, k) - xa(j, k)) * (z0(i, k) - xa(j, k));
        expect += beta * (xb(i, k) - xb(j, k)) * (xb(i, k) - xb(j, k));
      }
      CHECK(std::abs(c(i, j) - expect) <= 1e-12 * (1.0 + expect));
    }
  }
}

TEST_CASE("large beta pins the assignment to matching backgrounds") {
  // Distinct backgrounds with pairwise distance >= delta; beta*delta^2 far
  // above the transport-term diameter forces the identity assignment.
  RngStream rng(7, 0);
  const int n = 8;
  Matrix xb(n, 1);
  for (int i = 0; i < n; ++i) xb(i, 0) = i;  // delta = 1
  Matrix z0 = random_matrix(n, 1, rng);
  Matrix xa = random_matrix(n, 1, rng);
  Assignment a = emd_assignment(augmented_cost(z0, xb, xa, 1000.0));
  for (int i = 0; i < n; ++i) CHECK(a.perm[i] == i);
}

TEST_CASE("sinkhorn_plan: coupling sharpens as gamma grows") {
  RngStream rng(8, 0);
  Matrix cost = random_matrix(6, 6, rng);
  TransportPlan soft = sinkhorn_plan(cost, 1.0, 300);
  TransportPlan sharp = sinkhorn_plan(cost, 50.0, 300);
  // Entropy decreases with gamma.
  auto entropy = [](const TransportPlan& p) {
    double h = 0.0;
    for (int i = 0; i < p.weights.rows(); ++i) {
      for (int j = 0; j < p.weights.cols(); ++j) {
        const double w = p.weights(i, j);
        if (w > 0) h -= w * std::log(w);
      }
    }
    return h;
  };
  CHECK(entropy(sharp) < entropy(soft));
}
