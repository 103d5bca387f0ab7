#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <cmath>

#include "pnpda/baselines.hpp"
#include "pnpda/errors.hpp"

using namespace pnpda;

TEST_CASE("gaspari_cohn: endpoint values and the branch joint") {
  CHECK(gaspari_cohn(0.0, 1.0) == 1.0);
  CHECK(gaspari_cohn(2.0, 1.0) == 0.0);
  CHECK(gaspari_cohn(5.0, 1.0) == 0.0);
  // Second branch at z=1: 1/12 - 1/2 + 5/8 + 5/3 - 5 + 4 - 2/3 = 5/24.
  CHECK(gaspari_cohn(1.0, 1.0) == doctest::Approx(5.0 / 24.0).epsilon(1e-14));
  CHECK(gaspari_cohn(0.5, 2.0) == doctest::Approx(gaspari_cohn(1.0, 4.0)).epsilon(1e-14));
}

TEST_CASE("gaspari_cohn: monotone non-increasing on [0, 2c]") {
  const double c = 1.7;
  double prev = gaspari_cohn(0.0, c);
  for (int i = 1; i <= 200; ++i) {
    const double r = 2.0 * c * i / 200.0;
    const double val = gaspari_cohn(r, c);
    CHECK(val <= prev + 1e-15);
    CHECK(val >= 0.0);
    prev = val;
  }
}

TEST_CASE("gaspari_cohn: C^2 continuity at the branch joint") {
  const double h = 1e-6;
  auto d2 = [&](double z) {
    return (gaspari_cohn(z + h, 1.0) - 2 * gaspari_cohn(z, 1.0) +
            gaspari_cohn(z - h, 1.0)) /
           (h * h);
  };
  CHECK(std::abs(d2(1.0 - 10 * h) - d2(1.0 + 10 * h)) < 1e-2);
}

TEST_CASE("build_B: tiny length scale collapses to the diagonal") {
  GaspariCohnSpec spec{0.4, 3.0, Topology::bounded};  // support < 1 index
  SpdMatrix B = build_B(5, spec);
  CHECK((B.matrix() - 3.0 * Matrix::Identity(5, 5)).norm() == 0.0);
}

TEST_CASE("build_B: cyclic bandwidth matches the support width") {
  GaspariCohnSpec spec{1.0, 2.0, Topology::cyclic};
  SpdMatrix B = build_B(8, spec);
  for (int i = 0; i < 8; ++i) {
    for (int j = 0; j < 8; ++j) {
      const double dist = std::min(std::abs(i - j), 8 - std::abs(i - j));
      if (dist >= 2) {
        CHECK(B.matrix()(i, j) == 0.0);
      }
      if (dist == 0) CHECK(B.matrix()(i, j) == 2.0);
    }
  }
}

TEST_CASE("build_B: eigenvalues stay nonneg for dim=128, c=4") {
  GaspariCohnSpec spec{4.0, 1.5, Topology::cyclic};
  SpdMatrix B = build_B(128, spec);
  Eigen::SelfAdjointEigenSolver<Matrix> es(B.matrix());
  CHECK(es.eigenvalues().minCoeff() >= -1e-10);

  GaspariCohnSpec bounded{8.0, 2.0, Topology::bounded};
  SpdMatrix Bb = build_B(128, bounded);
  Eigen::SelfAdjointEigenSolver<Matrix> esb(Bb.matrix());
  CHECK(esb.eigenvalues().minCoeff() >= -1e-10);
}

TEST_CASE("threedvar_analysis: prior-dominated and observation-dominated limits") {
  Vector xb(3), y(3);
  xb << 1.0, 2.0, 3.0;
  y << -4.0, 0.0, 9.0;
  ObservationSpec spec({0, 1, 2}, SpdMatrix::identity(3));

  SpdMatrix tinyB = SpdMatrix::scaled_identity(3, 1e-14);
  CHECK((threedvar_analysis(xb, y, spec, tinyB) - xb).norm() < 1e-10);

  ObservationSpec tinyP({0, 1, 2}, SpdMatrix::scaled_identity(3, 1e-14));
  SpdMatrix B = SpdMatrix::identity(3);
  CHECK((threedvar_analysis(xb, y, tinyP, B) - y).norm() < 1e-10);
}

TEST_CASE("threedvar_analysis: equal-weight blend when B = P with H = I") {
  Vector xb(2), y(2);
  xb << 2.0, -2.0;
  y << 4.0, 6.0;
  ObservationSpec spec({0, 1}, SpdMatrix::scaled_identity(2, 3.0));
  SpdMatrix B = SpdMatrix::scaled_identity(2, 3.0);
  Vector xa = threedvar_analysis(xb, y, spec, B);
  CHECK((xa - 0.5 * (xb + y)).norm() <= 1e-12);
}

TEST_CASE("threedvar_analysis: gradient stationarity and numerical minimizer") {
  RngStream rng(1, 0);
  for (int trial = 0; trial < 25; ++trial) {
    const int d = 4, m = 2;
    Matrix mb(d, d);
    for (int i = 0; i < d * d; ++i) mb(i / d, i % d) = rng.normal();
    SpdMatrix B{Matrix(0.5 * (mb.transpose() * mb + (mb.transpose() * mb).transpose()) +
                       Matrix::Identity(d, d))};
    Matrix mp(m, m);
    for (int i = 0; i < m * m; ++i) mp(i / m, i % m) = rng.normal();
    Matrix pm = mp.transpose() * mp + Matrix::Identity(m, m);
    ObservationSpec spec({0, 2}, SpdMatrix{0.5 * (pm + pm.transpose())});

    Vector xb(d), y(m);
    for (int i = 0; i < d; ++i) xb[i] = 2.0 * rng.normal();
    for (int i = 0; i < m; ++i) y[i] = 2.0 * rng.normal();

    Vector xa = threedvar_analysis(xb, y, spec, B);

    auto grad_j = [&](const Vector& x) {
      return Vector(spd_solve(B, Vector(x - xb)) + misfit_gradient(x, y, spec));
    };
    CHECK(grad_j(xa).norm() <= 1e-8);

    // Steepest descent with exact line search on the quadratic objective,
    // started from xb: an independent numerical minimizer.
    Matrix hessian = B.matrix().inverse();
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < m; ++j) {
        hessian(spec.indices[i], spec.indices[j]) +=
            spec.noise_cov.matrix().inverse()(i, j);
      }
    }
    Vector x = xb;
    for (int it = 0; it < 500; ++it) {
      Vector g = grad_j(x);
      if (g.norm() < 1e-12) break;
      const double step = g.squaredNorm() / g.dot(hessian * g);
      x -= step * g;
    }
    CHECK((x - xa).norm() <= 1e-6);
  }
}

TEST_CASE("threedvar_analysis: Kalman residual identity") {
  RngStream rng(2, 0);
  const int d = 5, m = 3;
  Matrix mb(d, d);
  for (int i = 0; i < d * d; ++i) mb(i / d, i % d) = rng.normal();
  Matrix bm = mb.transpose() * mb + Matrix::Identity(d, d);
  SpdMatrix B{0.5 * (bm + bm.transpose())};
  ObservationSpec spec({0, 1, 4}, SpdMatrix::scaled_identity(m, 0.5));
  Vector xb(d), y(m);
  for (int i = 0; i < d; ++i) xb[i] = rng.normal();
  for (int i = 0; i < m; ++i) y[i] = rng.normal();

  Vector xa = threedvar_analysis(xb, y, spec, B);

  Matrix BHt(d, m), HBHt(m, m);
  for (int j = 0; j < m; ++j) BHt.col(j) = B.matrix().col(spec.indices[j]);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      HBHt(i, j) = B.matrix()(spec.indices[i], spec.indices[j]);
  Matrix K = BHt * (HBHt + spec.noise_cov.matrix()).inverse();
  Matrix HK(m, m);
  for (int i = 0; i < m; ++i) HK.row(i) = K.row(spec.indices[i]);
  Vector lhs = y - observe(xa, spec);
  Vector rhs = (Matrix::Identity(m, m) - HK) * (y - observe(xb, spec));
  CHECK((lhs - rhs).norm() <= 1e-10);
}

TEST_CASE("enkf_analysis: uninformative observations keep the background") {
  RngStream rng(3, 0);
  Ensemble ens;
  for (int i = 0; i < 10; ++i) {
    Vector m(3);
    for (int j = 0; j < 3; ++j) m[j] = rng.normal();
    ens.members.push_back(m);
  }
  ObservationSpec huge({0, 1, 2}, SpdMatrix::scaled_identity(3, 1e12));
  Vector y(3);
  y << 100.0, -50.0, 30.0;
  Ensemble out = enkf_analysis(ens, y, huge, rng);
  for (int i = 0; i < 10; ++i) {
    CHECK((out.members[i] - ens.members[i]).norm() < 1e-3);
  }
}

TEST_CASE("enkf_analysis: scalar Kalman oracle at N=1e4") {
  RngStream rng(4, 0);
  const int n = 10000;
  const double b_true = 4.0, r = 2.0, xb_mean = 1.0, y_obs = 3.0;
  Ensemble ens;
  ens.members.resize(n);
  for (int i = 0; i < n; ++i) {
    ens.members[i] = Vector::Constant(1, xb_mean + std::sqrt(b_true) * rng.normal());
  }
  ObservationSpec spec({0}, SpdMatrix::scaled_identity(1, r));
  Vector y = Vector::Constant(1, y_obs);
  Ensemble out = enkf_analysis(ens, y, spec, rng);
  // Exact scalar Kalman update with the true prior moments.
  const double k = b_true / (b_true + r);
  const double exact = xb_mean + k * (y_obs - xb_mean);
  CHECK(out.mean()[0] == doctest::Approx(exact).epsilon(0.02));
}

TEST_CASE("enkf_analysis: mean update follows the gain identity exactly") {
  RngStream rng(5, 0);
  Ensemble ens;
  for (int i = 0; i < 8; ++i) {
    Vector m(4);
    for (int j = 0; j < 4; ++j) m[j] = rng.normal();
    ens.members.push_back(m);
  }
  ObservationSpec spec({1, 3}, SpdMatrix::scaled_identity(2, 0.7));
  Vector y(2);
  y << 0.4, -0.9;

  // Reconstruct the perturbed observations with a cloned stream (the draw
  // order is part of the contract: all perturbations before the update).
  RngStream clone = rng;
  Ensemble out = enkf_analysis(ens, y, spec, rng);

  MvnSampler sampler(spec.noise_cov);
  Matrix ypert(8, 2);
  for (int i = 0; i < 8; ++i) ypert.row(i) = sampler.sample(clone, y).transpose();

  SpdMatrix B = ensemble_covariance(ens.members);
  Matrix BHt(4, 2), HBHt(2, 2);
  for (int j = 0; j < 2; ++j) BHt.col(j) = B.matrix().col(spec.indices[j]);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      HBHt(i, j) = B.matrix()(spec.indices[i], spec.indices[j]);
  Matrix K = BHt * (HBHt + spec.noise_cov.matrix()).inverse();

  Vector ypert_mean = ypert.colwise().mean().transpose();
  Vector expected = ens.mean() + K * (ypert_mean - observe(ens.mean(), spec));
  CHECK((out.mean() - expected).norm() <= 1e-10);
  CHECK(out.size() == ens.size());
  CHECK(out.dim() == ens.dim());
}

TEST_CASE("enrda_analysis: eta limits") {
  RngStream rng(6, 0);
  Ensemble ens;
  for (int i = 0; i < 6; ++i) {
    Vector m(2);
    m << rng.normal(), rng.normal();
    ens.members.push_back(m);
  }
  Vector y(2);
  y << 0.5, -0.5;

  // tr(Sigma) huge: eta -> 1, analyses are resampled background members.
  {
    RngStream r2 = rng;
    Ensemble out = enrda_analysis(ens, y, SpdMatrix::scaled_identity(2, 1e9),
                                  10.0, 100, r2);
    for (const auto& m : out.members) {
      double best = 1e30;
      for (const auto& b : ens.members) best = std::min(best, (m - b).norm());
      CHECK(best < 1e-3);
    }
  }
  // tr(Sigma) tiny: eta -> 0, analyses are (near-unperturbed) observations.
  {
    RngStream r2 = rng;
    Ensemble out = enrda_analysis(ens, y, SpdMatrix::scaled_identity(2, 1e-12),
                                  10.0, 100, r2);
    for (const auto& m : out.members) CHECK((m - y).norm() < 1e-3);
  }
}

TEST_CASE("enrda_analysis: mixture weight and segment membership") {
  // Sigma_obs = 2C has trace 6; an ensemble with sample-covariance trace 6
  // gives eta = 0.5 exactly.
  Matrix c(3, 3);
  c << 1.0, 0.5, 0.25, 0.5, 1.0, 0.5, 0.25, 0.5, 1.0;
  SpdMatrix sigma{2.0 * c};
  CHECK(sigma.trace() == doctest::Approx(6.0).epsilon(1e-14));

  const double s = std::sqrt(4.5);
  Ensemble ens;
  Vector base(3);
  base << 1.0, 2.0, 3.0;
  for (int axis = 0; axis < 2; ++axis) {
    for (double sign : {1.0, -1.0}) {
      Vector m = base;
      m[axis] += sign * s;
      ens.members.push_back(m);
    }
  }
  CHECK(ensemble_covariance(ens.members).trace() == doctest::Approx(6.0).epsilon(1e-12));

  Vector y(3);
  y << 1.5, 1.0, 2.0;
  RngStream rng(7, 0);
  RngStream clone = rng;
  Ensemble out = enrda_analysis(ens, y, sigma, 10.0, 300, rng);

  MvnSampler sampler(sigma);
  std::vector<Vector> ypert;
  for (int i = 0; i < ens.size(); ++i) ypert.push_back(sampler.sample(clone, y));

  const double eta = 0.5;
  for (const auto& m : out.members) {
    double best = 1e30;
    for (const auto& xb : ens.members) {
      for (const auto& yp : ypert) {
        best = std::min(best, (m - (eta * xb + (1.0 - eta) * yp)).norm());
      }
    }
    CHECK(best <= 1e-12);
  }
}

TEST_CASE("enrda_analysis: requires full-state observations") {
  Ensemble ens;
  ens.members.push_back(Vector::Zero(3));
  ens.members.push_back(Vector::Ones(3));
  RngStream rng(8, 0);
  CHECK_THROWS_AS(enrda_analysis(ens, Vector::Zero(2),
                                 SpdMatrix::identity(2), 10.0, 50, rng),
                  ConfigError);
}
