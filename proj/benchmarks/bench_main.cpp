#include <benchmark/benchmark.h>

#include "pnpda/analysis.hpp"
#include "pnpda/baselines.hpp"
#include "pnpda/dynamics.hpp"
#include "pnpda/transport.hpp"

using namespace pnpda;

namespace {

Matrix random_matrix(int n, int m, RngStream& rng) {
  Matrix out(n, m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) out(i, j) = rng.uniform();
  return out;
}

void BM_L63Rk4Step(benchmark::State& state) {
  L63Model model(l63_true_params());
  Vector x(3);
  x << 1.0, 1.0, 1.0;
  Vector out(3);
  Rk4Scratch scratch;
  for (auto _ : state) {
    rk4_step_into(model, x, 0.01, out, scratch);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_L63Rk4Step);

void BM_L96TwoScaleRk4Step(benchmark::State& state) {
  L96TwoScaleModel model(L96Params{});
  RngStream rng(1, 0);
  Vector x(8 + 256);
  for (int i = 0; i < x.size(); ++i) x[i] = rng.normal();
  Vector out(x.size());
  Rk4Scratch scratch;
  for (auto _ : state) {
    rk4_step_into(model, x, 0.005, out, scratch);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_L96TwoScaleRk4Step);

void BM_KsRecordedStep(benchmark::State& state) {
  KsParams p;
  KsModel model(p);
  RngStream rng(2, 0);
  Vector u(p.n_grid);
  for (int i = 0; i < p.n_grid; ++i) u[i] = 0.1 * rng.normal();
  const int substeps = ks_substeps(p);
  Rk4Scratch scratch;
  Vector next(p.n_grid);
  for (auto _ : state) {
    Vector x = u;
    for (int s = 0; s < substeps; ++s) {
      rk4_step_into(model, x, p.dt_record / substeps, next, scratch);
      x.swap(next);
    }
    benchmark::DoNotOptimize(x.data());
  }
}
BENCHMARK(BM_KsRecordedStep);

void BM_SinkhornPlan(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  RngStream rng(3, 0);
  Matrix cost = random_matrix(n, n, rng);
  for (auto _ : state) {
    TransportPlan plan = sinkhorn_plan(cost, 10.0, 300);
    benchmark::DoNotOptimize(plan.weights.data());
  }
}
BENCHMARK(BM_SinkhornPlan)->Arg(10)->Arg(40);

void BM_EmdAssignment(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  RngStream rng(4, 0);
  Matrix cost = random_matrix(n, n, rng);
  for (auto _ : state) {
    Assignment a = emd_assignment(cost);
    benchmark::DoNotOptimize(a.perm.data());
  }
}
BENCHMARK(BM_EmdAssignment)->Arg(32)->Arg(128);

void BM_NetForwardBatch32(benchmark::State& state) {
  RngStream rng(5, 0);
  VelocityNet net = make_velocity_net(8, {32, 64, 128, 64, 32}, 32, rng);
  Matrix x = random_matrix(32, 8, rng);
  Matrix xb = random_matrix(32, 8, rng);
  Vector tau(32);
  for (int i = 0; i < 32; ++i) tau[i] = rng.uniform();
  for (auto _ : state) {
    Matrix v = net_forward(net, x, tau, xb);
    benchmark::DoNotOptimize(v.data());
  }
}
BENCHMARK(BM_NetForwardBatch32);

void BM_NetBackwardBatch32(benchmark::State& state) {
  RngStream rng(6, 0);
  VelocityNet net = make_velocity_net(8, {32, 64, 128, 64, 32}, 32, rng);
  Matrix x = random_matrix(32, 8, rng);
  Matrix xb = random_matrix(32, 8, rng);
  Matrix targets = random_matrix(32, 8, rng);
  Vector tau(32);
  for (int i = 0; i < 32; ++i) tau[i] = rng.uniform();
  NetTensors grads = zeros_like(net);
  for (auto _ : state) {
    double loss = net_backward(net, x, tau, xb, targets, grads);
    benchmark::DoNotOptimize(loss);
  }
}
BENCHMARK(BM_NetBackwardBatch32);

void BM_ThreeDVarAnalysis(benchmark::State& state) {
  const int d = 128, m = 16;
  GaspariCohnSpec gc{8.0, 2.0, Topology::bounded};
  SpdMatrix B = build_B(d, gc);
  RngStream rng(7, 0);
  Vector xb(d);
  for (int i = 0; i < d; ++i) xb[i] = rng.normal();
  ObservationSpec spec(equally_spaced_indices(d, m),
                       SpdMatrix::scaled_identity(m, 0.01));
  Vector y(m);
  for (int i = 0; i < m; ++i) y[i] = rng.normal();
  for (auto _ : state) {
    Vector xa = threedvar_analysis(xb, y, spec, B);
    benchmark::DoNotOptimize(xa.data());
  }
}
BENCHMARK(BM_ThreeDVarAnalysis);

void BM_Analyze3d(benchmark::State& state) {
  RngStream rng(8, 0);
  Checkpoint ckpt;
  ckpt.net = make_velocity_net(3, {32, 64, 64, 32}, 32, rng);
  ckpt.norm_mean = Vector::Zero(3);
  ckpt.norm_std = Vector::Constant(3, 8.0);
  ObservationSpec spec({0, 2}, SpdMatrix::scaled_identity(2, 2.0));
  Vector xb(3), y(2);
  xb << 1.0, 2.0, 24.0;
  y << 1.5, 23.0;
  PnpConfig cfg;
  for (auto _ : state) {
    RngStream run(9, 0);
    Vector xa = analyze_3d(ckpt, xb, y, spec, cfg, run);
    benchmark::DoNotOptimize(xa.data());
  }
}
BENCHMARK(BM_Analyze3d);

}  // namespace

BENCHMARK_MAIN();
