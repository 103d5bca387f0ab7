#include "pnpda/analysis.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <iostream>
#include <string>

#include "pnpda/errors.hpp"

namespace pnpda {

namespace {

// Largest eigenvalue of S_o P^{-1} S_o, the curvature of the Mahalanobis
// misfit in normalized coordinates restricted to the observed subspace.
double misfit_curvature(const ObservationSpec& spec, const Vector& norm_std) {
  const int m = spec.obs_dim();
  Matrix pinv = spd_solve(spec.noise_cov, Matrix(Matrix::Identity(m, m)));
  Vector s(m);
  for (int i = 0; i < m; ++i) s[i] = norm_std[spec.indices[i]];
  Matrix c = s.asDiagonal() * pinv * s.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (c + c.transpose()));
  return es.eigenvalues().maxCoeff();
}

struct PnpLoop {
  const Checkpoint& model;
  const PnpConfig& cfg;
  RngStream& rng;

  // Runs the PnP iteration in normalized coordinates given a gradient
  // callback returning the misfit gradient at a physical-space state.
  // Returns false on numerical failure.
  bool run(const Vector& xb_phys,
           const std::function<Vector(const Vector&)>& grad_phys,
           double step_scale, Vector& out_phys) {
    const Vector& mean = model.norm_mean;
    const Vector& std = model.norm_std;
    const Vector xb_n = normalize_vec(xb_phys, mean, std);
    Vector x_n = xb_n;
    const int d = static_cast<int>(xb_phys.size());
    Vector z(d);

    for (int n = 0; n < cfg.n_iter; ++n) {
      const double tau = static_cast<double>(n) / cfg.n_iter;
      const double gamma = step_scale * std::pow(1.0 - tau, cfg.alpha);

      Vector x_phys = denormalize_vec(x_n, mean, std);
      Vector g_n = std.cwiseProduct(grad_phys(x_phys));
      Vector w = x_n - gamma * g_n;

      Vector w_tilde;
      if (cfg.blend_noise) {
        for (int i = 0; i < d; ++i) z[i] = rng.normal();
        w_tilde = (1.0 - tau) * z + tau * w;
      } else {
        w_tilde = w;
      }
      Vector v = net_forward_one(model.net, w_tilde, tau, xb_n);
      x_n = w_tilde + (1.0 - tau) * v;
      if (!x_n.allFinite()) return false;
    }
    out_phys = denormalize_vec(x_n, mean, std);
    return out_phys.allFinite();
  }
};

}  // namespace

Vector denoise(const Checkpoint& model, const Vector& xb, const Vector& x,
               double tau) {
  Vector v = net_forward_one(model.net, normalize_vec(x, model.norm_mean, model.norm_std),
                             tau,
                             normalize_vec(xb, model.norm_mean, model.norm_std));
  // Velocity maps back through the scale only, so D_1(x) == x exactly.
  return x + (1.0 - tau) * model.norm_std.cwiseProduct(v);
}

Vector analyze_3d(const Checkpoint& model, const Vector& xb, const Vector& y,
                  const ObservationSpec& spec, const PnpConfig& cfg,
                  RngStream& rng, bool* fallback) {
  if (fallback) *fallback = false;
  double scale = cfg.step_scale;
  if (scale <= 0.0) {
    // Largest uniformly stable constant for the quadratic misfit: the
    // gradient map stays contractive (gamma_n * L <= 1.8 < 2) for every tau
    // and every exponent alpha of the (1-tau)^alpha schedule.
    scale = 1.8 / std::max(misfit_curvature(spec, model.norm_std), 1e-12);
  }
  PnpLoop loop{model, cfg, rng};
  Vector out;
  const bool ok = loop.run(
      xb, [&](const Vector& x) { return misfit_gradient(x, y, spec); }, scale,
      out);
  if (!ok) {
    std::cerr << "[pnpda] analyze_3d: non-finite iterate, falling back to the "
                 "background state\n";
    if (fallback) *fallback = true;
    return xb;
  }
  return out;
}

AdjointModel adjoint_l63(const L63Params& p, double dt) {
  AdjointModel m;
  m.dt = dt;
  m.drift = L63Model(p);
  m.jacobian_tvp = [p](const Vector& x, const Vector& v, Vector& out) {
    out.resize(3);
    out[0] = -p.sigma * v[0] + (p.rho - x[2]) * v[1] + x[1] * v[2];
    out[1] = p.sigma * v[0] - v[1] + x[0] * v[2];
    out[2] = -x[0] * v[1] - p.beta * v[2];
  };
  return m;
}

AdjointModel adjoint_l96_single(double F_prime, double dt) {
  AdjointModel m;
  m.dt = dt;
  m.drift = L96SingleModel(F_prime);
  m.jacobian_tvp = [](const Vector& x, const Vector& v, Vector& out) {
    const int K = static_cast<int>(x.size());
    out = Vector::Zero(K);
    for (int k = 0; k < K; ++k) {
      const double xm1 = x[(k - 1 + K) % K];
      const double xm2 = x[(k - 2 + K) % K];
      const double xp1 = x[(k + 1) % K];
      out[(k - 2 + K) % K] += -xm1 * v[k];
      out[(k - 1 + K) % K] += -(xm2 - xp1) * v[k];
      out[k] += -v[k];
      out[(k + 1) % K] += xm1 * v[k];
    }
  };
  return m;
}

namespace {

void check_window(const WindowSpec& win) {
  if (win.obs.empty()) {
    throw ConfigError("WindowSpec: at least one observation required");
  }
  for (std::size_t i = 0; i < win.obs.size(); ++i) {
    if (win.obs[i].steps_from_start < 0) {
      throw ConfigError("WindowSpec: negative step offset");
    }
    if (i > 0 &&
        win.obs[i].steps_from_start <= win.obs[i - 1].steps_from_start) {
      throw ConfigError("WindowSpec: observation steps must be increasing");
    }
  }
}

// Pulls a gradient backwards through one RK4 step that started at x,
// recomputing the stage states.
void rk4_adjoint_step(const AdjointModel& m, const Vector& x, Vector& xbar) {
  const double dt = m.dt;
  const Eigen::Index d = x.size();
  Vector k1(d), k2(d), k3(d);
  m.drift(x, k1);
  Vector a2 = x + (0.5 * dt) * k1;
  m.drift(a2, k2);
  Vector a3 = x + (0.5 * dt) * k2;
  m.drift(a3, k3);
  Vector a4 = x + dt * k3;

  Vector bar_k1 = (dt / 6.0) * xbar;
  Vector bar_k2 = (dt / 3.0) * xbar;
  Vector bar_k3 = (dt / 3.0) * xbar;
  Vector bar_k4 = (dt / 6.0) * xbar;
  Vector bar_x = xbar;
  Vector tmp(d);

  m.jacobian_tvp(a4, bar_k4, tmp);  // k4 = f(a4), a4 = x + dt k3
  bar_x += tmp;
  bar_k3 += dt * tmp;

  m.jacobian_tvp(a3, bar_k3, tmp);  // k3 = f(a3), a3 = x + dt/2 k2
  bar_x += tmp;
  bar_k2 += (0.5 * dt) * tmp;

  m.jacobian_tvp(a2, bar_k2, tmp);  // k2 = f(a2), a2 = x + dt/2 k1
  bar_x += tmp;
  bar_k1 += (0.5 * dt) * tmp;

  m.jacobian_tvp(x, bar_k1, tmp);  // k1 = f(x)
  bar_x += tmp;

  xbar = std::move(bar_x);
}

// Forward pass storing the state at every step start up to the last
// observation.
Matrix forward_states(const Vector& x0, const WindowSpec& win) {
  const int n_steps = win.obs.back().steps_from_start;
  Matrix states(n_steps + 1, x0.size());
  states.row(0) = x0.transpose();
  Rk4Scratch scratch;
  Vector x = x0;
  Vector next(x0.size());
  for (int s = 1; s <= n_steps; ++s) {
    rk4_step_into(win.model.drift, x, win.model.dt, next, scratch);
    x.swap(next);
    if (!x.allFinite()) {
      throw NonFiniteState("misfit_4d: model blow-up inside window at step " +
                           std::to_string(s));
    }
    states.row(s) = x.transpose();
  }
  return states;
}

}  // namespace

double misfit_4d(const Vector& x0, const WindowSpec& win) {
  check_window(win);
  Matrix states = forward_states(x0, win);
  double j = 0.0;
  for (const auto& o : win.obs) {
    j += misfit(states.row(o.steps_from_start).transpose(), o.y, o.spec);
  }
  return j;
}

Vector misfit_gradient_4d(const Vector& x0, const WindowSpec& win) {
  check_window(win);
  Matrix states = forward_states(x0, win);
  const int n_steps = win.obs.back().steps_from_start;

  Vector lambda = Vector::Zero(x0.size());
  int next_obs = static_cast<int>(win.obs.size()) - 1;
  for (int s = n_steps; s >= 1; --s) {
    if (next_obs >= 0 && win.obs[next_obs].steps_from_start == s) {
      lambda += misfit_gradient(states.row(s).transpose(), win.obs[next_obs].y,
                                win.obs[next_obs].spec);
      --next_obs;
    }
    rk4_adjoint_step(win.model, states.row(s - 1).transpose(), lambda);
  }
  if (next_obs >= 0 && win.obs[next_obs].steps_from_start == 0) {
    lambda += misfit_gradient(states.row(0).transpose(), win.obs[next_obs].y,
                              win.obs[next_obs].spec);
  }
  return lambda;
}

Vector analyze_4d(const Checkpoint& model, const Vector& xb,
                  const WindowSpec& win, const PnpConfig& cfg, RngStream& rng,
                  bool* fallback) {
  if (fallback) *fallback = false;
  check_window(win);

  auto grad = [&](const Vector& x) { return misfit_gradient_4d(x, win); };

  double scale = cfg.step_scale;
  Vector out;
  try {
    if (scale <= 0.0) {
      // Curvature of the window misfit in normalized coordinates. The summed
      // per-observation curvatures floor the estimate; power iteration on
      // finite-difference Hessian-vector products picks up the tangent-linear
      // amplification through the window.
      double curvature = 0.0;
      for (const auto& o : win.obs) {
        curvature += misfit_curvature(o.spec, model.norm_std);
      }
      auto grad_n = [&](const Vector& x_n) {
        return Vector(model.norm_std.cwiseProduct(
            grad(denormalize_vec(x_n, model.norm_mean, model.norm_std))));
      };
      const Vector xb_n = normalize_vec(xb, model.norm_mean, model.norm_std);
      const Vector g0 = grad_n(xb_n);
      Vector v = g0.norm() > 1e-12 ? Vector(g0 / g0.norm())
                                   : Vector(Vector::Ones(xb.size()).normalized());
      const double eps = 1e-5;
      for (int it = 0; it < 8; ++it) {
        Vector hv = (grad_n(xb_n + eps * v) - g0) / eps;
        const double rayleigh = std::abs(v.dot(hv));
        curvature = std::max(curvature, rayleigh);
        const double norm = hv.norm();
        if (norm < 1e-12) break;
        v = hv / norm;
      }
      scale = 1.8 / std::max(curvature, 1e-12);
    }
    PnpLoop loop{model, cfg, rng};
    if (loop.run(xb, grad, scale, out)) return out;
  } catch (const NonFiniteState&) {
    // fall through to the background fallback
  }
  std::cerr << "[pnpda] analyze_4d: non-finite iterate, falling back to the "
               "background state\n";
  if (fallback) *fallback = true;
  return xb;
}

EnsembleAnalysis analyze_ensemble(const Checkpoint& model, const Vector& xb,
                                  const Vector& y, const ObservationSpec& spec,
                                  const PnpConfig& cfg, RngStream& rng) {
  if (cfg.n_samples < 1) {
    throw ConfigError("analyze_ensemble: n_samples must be >= 1");
  }
  EnsembleAnalysis result;
  for (int i = 0; i < cfg.n_samples; ++i) {
    bool fell_back = false;
    Vector xa;
    if (cfg.n_samples == 1) {
      // A single draw reduces to analyze_3d on the caller's stream.
      xa = analyze_3d(model, xb, y, spec, cfg, rng, &fell_back);
    } else {
      RngStream member_rng = rng.child(i);
      xa = analyze_3d(model, xb, y, spec, cfg, member_rng, &fell_back);
    }
    if (fell_back) {
      ++result.n_failed;
    } else {
      result.members.push_back(std::move(xa));
    }
  }
  if (result.members.empty()) {
    throw NonFiniteState("analyze_ensemble: all members failed");
  }
  result.mean = Vector::Zero(xb.size());
  for (const auto& m : result.members) result.mean += m;
  result.mean /= static_cast<double>(result.members.size());
  return result;
}

}  // namespace pnpda
