#include "pnpda/observations.hpp"

#include <algorithm>
#include <string>

#include "pnpda/errors.hpp"

namespace pnpda {

ObservationSpec::ObservationSpec(std::vector<int> idx, SpdMatrix cov)
    : indices(std::move(idx)), noise_cov(std::move(cov)) {
  if (indices.empty()) throw ConfigError("ObservationSpec: no indices");
  if (!std::is_sorted(indices.begin(), indices.end()) ||
      std::adjacent_find(indices.begin(), indices.end()) != indices.end()) {
    throw ConfigError("ObservationSpec: indices must be sorted and unique");
  }
  if (indices.front() < 0) {
    throw ConfigError("ObservationSpec: negative index");
  }
  if (noise_cov.dim() != static_cast<int>(indices.size())) {
    throw ConfigError("ObservationSpec: noise covariance dim " +
                      std::to_string(noise_cov.dim()) + " != index count " +
                      std::to_string(indices.size()));
  }
}

std::vector<int> equally_spaced_indices(int dim, int m) {
  if (m < 1 || m > dim) throw ConfigError("equally_spaced_indices: bad m");
  std::vector<int> idx(m);
  for (int i = 0; i < m; ++i) {
    idx[i] = static_cast<int>((2LL * i + 1) * dim / (2LL * m));
  }
  return idx;
}

Vector observe(const Vector& x, const ObservationSpec& spec) {
  Vector y(spec.obs_dim());
  for (int i = 0; i < spec.obs_dim(); ++i) y[i] = x[spec.indices[i]];
  return y;
}

Vector scatter(const Vector& y_like, const ObservationSpec& spec, int dim) {
  Vector x = Vector::Zero(dim);
  for (int i = 0; i < spec.obs_dim(); ++i) x[spec.indices[i]] = y_like[i];
  return x;
}

ObservationBatch make_observations(const Trajectory& truth,
                                   const ObservationSpec& spec, int every_n,
                                   RngStream& rng) {
  if (every_n < 1) throw ConfigError("make_observations: every_n must be >= 1");
  const int n_obs = (truth.size() - 1) / every_n;
  ObservationBatch batch{std::vector<double>(), Matrix(n_obs, spec.obs_dim()),
                         spec};
  batch.times.resize(n_obs);
  MvnSampler noise(spec.noise_cov);
  const Vector zero = Vector::Zero(spec.obs_dim());
  for (int k = 0; k < n_obs; ++k) {
    const int step = (k + 1) * every_n;
    batch.times[k] = truth.times[step];
    Vector clean = observe(truth.states.row(step).transpose(), spec);
    batch.values.row(k) = (clean + noise.sample(rng, zero)).transpose();
  }
  return batch;
}

double misfit(const Vector& x, const Vector& y, const ObservationSpec& spec) {
  Vector r = y - observe(x, spec);
  return 0.5 * r.dot(spd_solve(spec.noise_cov, r));
}

Vector misfit_gradient(const Vector& x, const Vector& y,
                       const ObservationSpec& spec) {
  Vector r = observe(x, spec) - y;  // Hx - y
  Vector w = spd_solve(spec.noise_cov, r);
  return scatter(w, spec, static_cast<int>(x.size()));
}

}  // namespace pnpda
