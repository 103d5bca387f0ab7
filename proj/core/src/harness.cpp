#include "pnpda/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <map>
#include <thread>

#include <json.hpp>

#include "pnpda/errors.hpp"
#include "pnpda/io.hpp"

namespace pnpda {

namespace {

using nlohmann::json;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

int state_dim(const ExperimentConfig& cfg) {
  if (cfg.testbed == "l63") return 3;
  if (cfg.testbed == "l96") return cfg.dyn.l96.K;
  if (cfg.testbed == "ks") return cfg.dyn.ks.n_grid;
  throw ConfigError("unknown testbed: " + cfg.testbed);
}

namespace {

L63Params l63_from_json(const json& j, L63Params def) {
  def.sigma = j.value("sigma", def.sigma);
  def.rho = j.value("rho", def.rho);
  def.beta = j.value("beta", def.beta);
  return def;
}

json l63_to_json(const L63Params& p) {
  return json{{"sigma", p.sigma}, {"rho", p.rho}, {"beta", p.beta}};
}

Matrix correlation_from_json(const json& rows) {
  const std::size_t r = rows.size();
  Matrix m(r, r);
  for (std::size_t i = 0; i < r; ++i) {
    if (rows[i].size() != r) {
      throw ConfigError("obs_correlation must be square");
    }
    for (std::size_t j = 0; j < r; ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          rows[i][j].get<double>();
    }
  }
  return m;
}

ExperimentConfig config_from_json(const json& root) {
  const json& j = root.contains("config") ? root.at("config") : root;

  ExperimentConfig cfg;
  cfg.testbed = j.at("testbed").get<std::string>();
  if (cfg.testbed != "l63" && cfg.testbed != "l96" && cfg.testbed != "ks") {
    throw ConfigError("unknown testbed: " + cfg.testbed);
  }
  cfg.seed = j.value("seed", std::uint64_t{0});

  if (j.contains("dynamics")) {
    const json& d = j.at("dynamics");
    cfg.dyn.dt = d.value("dt", cfg.dyn.dt);
    cfg.dyn.obs_every_steps = d.value("obs_every_steps", cfg.dyn.obs_every_steps);
    cfg.dyn.spinup_steps = d.value("spinup_steps", cfg.dyn.spinup_steps);
    cfg.dyn.discard_steps = d.value("discard_steps", cfg.dyn.discard_steps);
    cfg.dyn.record_steps = d.value("record_steps", cfg.dyn.record_steps);
    cfg.dyn.operational_noise_std =
        d.value("operational_noise_std", cfg.dyn.operational_noise_std);
    if (d.contains("l63_true")) {
      cfg.dyn.l63_true = l63_from_json(d.at("l63_true"), cfg.dyn.l63_true);
    }
    if (d.contains("l63_operational")) {
      cfg.dyn.l63_operational =
          l63_from_json(d.at("l63_operational"), cfg.dyn.l63_operational);
    }
    if (d.contains("l96")) {
      const json& l = d.at("l96");
      cfg.dyn.l96.K = l.value("K", cfg.dyn.l96.K);
      cfg.dyn.l96.J = l.value("J", cfg.dyn.l96.J);
      cfg.dyn.l96.F = l.value("F", cfg.dyn.l96.F);
      cfg.dyn.l96.h = l.value("h", cfg.dyn.l96.h);
      cfg.dyn.l96.b = l.value("b", cfg.dyn.l96.b);
      cfg.dyn.l96.c = l.value("c", cfg.dyn.l96.c);
      cfg.dyn.l96.F_prime = l.value("F_prime", cfg.dyn.l96.F_prime);
    }
    if (d.contains("ks")) {
      const json& k = d.at("ks");
      cfg.dyn.ks.nu = k.value("nu", cfg.dyn.ks.nu);
      cfg.dyn.ks.L = k.value("L", cfg.dyn.ks.L);
      cfg.dyn.ks.n_grid = k.value("n_grid", cfg.dyn.ks.n_grid);
      cfg.dyn.ks.dt_record = k.value("dt_record", cfg.dyn.ks.dt_record);
      cfg.dyn.ks.dt_internal = k.value("dt_internal", cfg.dyn.ks.dt_internal);
    }
  }
  if (cfg.testbed == "ks") cfg.dyn.dt = cfg.dyn.ks.dt_record;

  if (j.contains("pairgen")) {
    const json& p = j.at("pairgen");
    cfg.pairgen.method = p.value("method", cfg.pairgen.method);
    cfg.pairgen.n_members = p.value("n_members", cfg.pairgen.n_members);
    cfg.pairgen.init_spread = p.value("init_spread", cfg.pairgen.init_spread);
    cfg.pairgen.sinkhorn_gamma =
        p.value("sinkhorn_gamma", cfg.pairgen.sinkhorn_gamma);
    cfg.pairgen.sinkhorn_iters =
        p.value("sinkhorn_iters", cfg.pairgen.sinkhorn_iters);
    if (p.contains("obs_indices")) {
      cfg.pairgen.obs_indices = p.at("obs_indices").get<std::vector<int>>();
    }
    cfg.pairgen.obs_sigma = p.value("obs_sigma", cfg.pairgen.obs_sigma);
    cfg.pairgen.n_cycles = p.value("n_cycles", cfg.pairgen.n_cycles);
    if (p.contains("obs_correlation")) {
      cfg.pairgen.obs_correlation =
          correlation_from_json(p.at("obs_correlation"));
    }
  }

  if (j.contains("eval")) {
    const json& e = j.at("eval");
    if (e.contains("obs_indices")) {
      cfg.eval.obs_indices = e.at("obs_indices").get<std::vector<int>>();
    }
    cfg.eval.obs_sigma = e.value("obs_sigma", cfg.eval.obs_sigma);
    cfg.eval.n_cycles = e.value("n_cycles", cfg.eval.n_cycles);
    cfg.eval.n_runs = e.value("n_runs", cfg.eval.n_runs);
    cfg.eval.init_spread = e.value("init_spread", cfg.eval.init_spread);
    cfg.eval.skip_cycles = e.value("skip_cycles", cfg.eval.skip_cycles);
  }

  if (j.contains("threedvar")) {
    const json& t = j.at("threedvar");
    cfg.threedvar.length_scale = t.value("length_scale", 1.0);
    cfg.threedvar.variance = t.value("variance", 1.0);
    const std::string topo = t.value("topology", "bounded");
    if (topo == "cyclic") {
      cfg.threedvar.topology = Topology::cyclic;
    } else if (topo == "bounded") {
      cfg.threedvar.topology = Topology::bounded;
    } else {
      throw ConfigError("threedvar.topology must be cyclic or bounded");
    }
  }

  if (j.contains("train")) {
    const json& t = j.at("train");
    cfg.train.lr = t.value("lr", cfg.train.lr);
    cfg.train.weight_decay = t.value("weight_decay", cfg.train.weight_decay);
    cfg.train.batch = t.value("batch", cfg.train.batch);
    cfg.train.max_epochs = t.value("max_epochs", cfg.train.max_epochs);
    cfg.train.plateau_factor = t.value("plateau_factor", cfg.train.plateau_factor);
    cfg.train.plateau_patience =
        t.value("plateau_patience", cfg.train.plateau_patience);
    cfg.train.early_stop_patience =
        t.value("early_stop_patience", cfg.train.early_stop_patience);
    cfg.train.beta = t.value("beta", cfg.train.beta);
    cfg.train.seed = t.value("seed", cfg.train.seed);
    cfg.train.val_fraction = t.value("val_fraction", cfg.train.val_fraction);
    if (t.contains("widths")) {
      cfg.train.widths = t.at("widths").get<std::vector<int>>();
    }
    cfg.train.d_tau = t.value("d_tau", cfg.train.d_tau);
  }

  if (j.contains("pnp")) {
    const json& p = j.at("pnp");
    cfg.pnp.n_iter = p.value("n_iter", cfg.pnp.n_iter);
    cfg.pnp.alpha = p.value("alpha", cfg.pnp.alpha);
    cfg.pnp.n_samples = p.value("n_samples", cfg.pnp.n_samples);
    cfg.pnp.step_scale = p.value("step_scale", cfg.pnp.step_scale);
  }
  return cfg;
}

}  // namespace

ExperimentConfig config_from_json_text(const std::string& text) {
  return config_from_json(json::parse(text));
}

ExperimentConfig load_config(const std::string& path) {
  return config_from_json_text(read_text_file(path));
}

std::string config_to_json_text(const ExperimentConfig& cfg) {
  json d{{"dt", cfg.dyn.dt},
         {"obs_every_steps", cfg.dyn.obs_every_steps},
         {"spinup_steps", cfg.dyn.spinup_steps},
         {"discard_steps", cfg.dyn.discard_steps},
         {"record_steps", cfg.dyn.record_steps},
         {"operational_noise_std", cfg.dyn.operational_noise_std},
         {"l63_true", l63_to_json(cfg.dyn.l63_true)},
         {"l63_operational", l63_to_json(cfg.dyn.l63_operational)},
         {"l96",
          json{{"K", cfg.dyn.l96.K},
               {"J", cfg.dyn.l96.J},
               {"F", cfg.dyn.l96.F},
               {"h", cfg.dyn.l96.h},
               {"b", cfg.dyn.l96.b},
               {"c", cfg.dyn.l96.c},
               {"F_prime", cfg.dyn.l96.F_prime}}},
         {"ks",
          json{{"nu", cfg.dyn.ks.nu},
               {"L", cfg.dyn.ks.L},
               {"n_grid", cfg.dyn.ks.n_grid},
               {"dt_record", cfg.dyn.ks.dt_record},
               {"dt_internal", cfg.dyn.ks.dt_internal}}}};

  json pg{{"method", cfg.pairgen.method},
          {"n_members", cfg.pairgen.n_members},
          {"init_spread", cfg.pairgen.init_spread},
          {"sinkhorn_gamma", cfg.pairgen.sinkhorn_gamma},
          {"sinkhorn_iters", cfg.pairgen.sinkhorn_iters},
          {"obs_indices", cfg.pairgen.obs_indices},
          {"obs_sigma", cfg.pairgen.obs_sigma},
          {"n_cycles", cfg.pairgen.n_cycles}};
  if (cfg.pairgen.obs_correlation.size() > 0) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < cfg.pairgen.obs_correlation.rows(); ++i) {
      json row = json::array();
      for (Eigen::Index k = 0; k < cfg.pairgen.obs_correlation.cols(); ++k) {
        row.push_back(cfg.pairgen.obs_correlation(i, k));
      }
      rows.push_back(std::move(row));
    }
    pg["obs_correlation"] = std::move(rows);
  }

  json root{
      {"format_version", 1},
      {"testbed", cfg.testbed},
      {"seed", cfg.seed},
      {"dynamics", std::move(d)},
      {"pairgen", std::move(pg)},
      {"eval",
       json{{"obs_indices", cfg.eval.obs_indices},
            {"obs_sigma", cfg.eval.obs_sigma},
            {"n_cycles", cfg.eval.n_cycles},
            {"n_runs", cfg.eval.n_runs},
            {"init_spread", cfg.eval.init_spread},
            {"skip_cycles", cfg.eval.skip_cycles}}},
      {"threedvar",
       json{{"length_scale", cfg.threedvar.length_scale},
            {"variance", cfg.threedvar.variance},
            {"topology",
             cfg.threedvar.topology == Topology::cyclic ? "cyclic" : "bounded"}}},
      {"train",
       json{{"lr", cfg.train.lr},
            {"weight_decay", cfg.train.weight_decay},
            {"batch", cfg.train.batch},
            {"max_epochs", cfg.train.max_epochs},
            {"plateau_factor", cfg.train.plateau_factor},
            {"plateau_patience", cfg.train.plateau_patience},
            {"early_stop_patience", cfg.train.early_stop_patience},
            {"beta", cfg.train.beta},
            {"seed", cfg.train.seed},
            {"val_fraction", cfg.train.val_fraction},
            {"widths", cfg.train.widths},
            {"d_tau", cfg.train.d_tau}}},
      {"pnp",
       json{{"n_iter", cfg.pnp.n_iter},
            {"alpha", cfg.pnp.alpha},
            {"n_samples", cfg.pnp.n_samples},
            {"step_scale", cfg.pnp.step_scale}}}};
  return root.dump(2);
}

ObservationSpec obs_spec_for(const ExperimentConfig& cfg,
                             const std::vector<int>& indices, double sigma) {
  const int m = static_cast<int>(indices.size());
  const Matrix& corr = cfg.pairgen.obs_correlation;
  Matrix cov(m, m);
  for (int i = 0; i < m; ++i) {
    for (int k = 0; k < m; ++k) {
      double c = (i == k) ? 1.0 : 0.0;
      if (corr.size() > 0) c = corr(indices[i], indices[k]);
      cov(i, k) = sigma * sigma * c;
    }
  }
  return ObservationSpec(indices, SpdMatrix{std::move(cov)});
}

ObservationSpec pairgen_obs_spec(const ExperimentConfig& cfg) {
  if (cfg.pairgen.obs_indices.empty()) {
    throw ConfigError("pairgen.obs_indices missing");
  }
  return obs_spec_for(cfg, cfg.pairgen.obs_indices, cfg.pairgen.obs_sigma);
}

ObservationSpec eval_obs_spec(const ExperimentConfig& cfg) {
  if (cfg.eval.obs_indices.empty()) {
    throw ConfigError("eval.obs_indices missing");
  }
  return obs_spec_for(cfg, cfg.eval.obs_indices, cfg.eval.obs_sigma);
}

namespace {

struct SteppedModel {
  DriftFn drift;
  double dt = 0.0;
  int substeps = 1;
  double noise_std = 0.0;
};

SteppedModel true_model(const ExperimentConfig& cfg) {
  if (cfg.testbed == "l63") {
    return {L63Model(cfg.dyn.l63_true), cfg.dyn.dt, 1, 0.0};
  }
  if (cfg.testbed == "l96") {
    return {L96TwoScaleModel(cfg.dyn.l96), cfg.dyn.dt, 1, 0.0};
  }
  return {KsModel(cfg.dyn.ks), cfg.dyn.ks.dt_record, ks_substeps(cfg.dyn.ks),
          0.0};
}

SteppedModel operational_model(const ExperimentConfig& cfg) {
  if (cfg.testbed == "l63") {
    return {L63Model(cfg.dyn.l63_operational), cfg.dyn.dt, 1,
            cfg.dyn.operational_noise_std};
  }
  if (cfg.testbed == "l96") {
    return {L96SingleModel(cfg.dyn.l96.F_prime), cfg.dyn.dt, 1,
            cfg.dyn.operational_noise_std};
  }
  return {KsModel(cfg.dyn.ks), cfg.dyn.ks.dt_record, ks_substeps(cfg.dyn.ks),
          cfg.dyn.operational_noise_std};
}

Vector nature_initial_state(const ExperimentConfig& cfg, RngStream& rng) {
  if (cfg.testbed == "l63") {
    Vector x(3);
    for (int i = 0; i < 3; ++i) x[i] = 1.0 + rng.normal();
    return x;
  }
  if (cfg.testbed == "l96") {
    const int K = cfg.dyn.l96.K;
    const int n_fast = cfg.dyn.l96.J * K;
    Vector x(K + n_fast);
    for (int i = 0; i < K; ++i) x[i] = rng.normal();
    for (int i = 0; i < n_fast; ++i) x[K + i] = 0.05 * rng.normal();
    return x;
  }
  const KsParams& ks = cfg.dyn.ks;
  const double dx = ks_dx(ks);
  Vector u(ks.n_grid);
  for (int i = 0; i < ks.n_grid; ++i) {
    const double xi = (i + 1) * dx;
    u[i] = 0.1 * std::sin(2.0 * M_PI * xi / ks.L) + 0.01 * rng.normal();
  }
  return u;
}

}  // namespace

NatureRun generate_nature_run(const ExperimentConfig& cfg) {
  if (cfg.dyn.record_steps < 1) {
    throw ConfigError("dynamics.record_steps must be >= 1");
  }
  SteppedModel model = true_model(cfg);
  RngStream nature_rng = seeded_rng(cfg.seed, kStreamNature);
  Vector x = nature_initial_state(cfg, nature_rng);

  const int pre = cfg.dyn.spinup_steps + cfg.dyn.discard_steps;
  if (pre > 0) {
    advance(model.drift, x, pre, model.dt, 0.0, nature_rng, model.substeps);
  }
  Trajectory full = integrate(model.drift, x, cfg.dyn.record_steps, model.dt,
                              0.0, nature_rng, model.substeps);

  NatureRun nr{Trajectory{}, ObservationBatch{{}, Matrix(), pairgen_obs_spec(cfg)}};
  if (cfg.testbed == "l96") {
    // DA operates on the slow variables only.
    nr.truth.times = full.times;
    nr.truth.states = full.states.leftCols(cfg.dyn.l96.K);
  } else {
    nr.truth = std::move(full);
  }

  RngStream obs_rng = seeded_rng(cfg.seed, kStreamPairgenObs);
  nr.pairgen_obs = make_observations(nr.truth, pairgen_obs_spec(cfg),
                                     cfg.dyn.obs_every_steps, obs_rng);
  return nr;
}

PairDataset generate_training_pairs(const ExperimentConfig& cfg,
                                    const NatureRun& nature) {
  const int d = state_dim(cfg);
  const int n_members = cfg.pairgen.n_members;
  int n_pairs = nature.pairgen_obs.size();
  if (cfg.pairgen.n_cycles > 0) n_pairs = std::min(n_pairs, cfg.pairgen.n_cycles);
  if (n_pairs < 1) throw ConfigError("no observation times for pair generation");

  RngStream rng = seeded_rng(cfg.seed, kStreamPairgenLoop);
  SteppedModel op = operational_model(cfg);
  const ObservationSpec& spec = nature.pairgen_obs.spec;

  Ensemble ens;
  ens.members.resize(n_members);
  const Vector truth0 = nature.truth.states.row(0).transpose();
  for (int i = 0; i < n_members; ++i) {
    Vector member = truth0;
    for (int k = 0; k < d; ++k) member[k] += cfg.pairgen.init_spread * rng.normal();
    ens.members[i] = std::move(member);
  }

  PairDataset data;
  data.testbed = cfg.testbed;
  data.generator = cfg.pairgen.method;
  data.seed = cfg.seed;
  data.backgrounds.resize(n_pairs, d);
  data.analyses.resize(n_pairs, d);

  for (int k = 0; k < n_pairs; ++k) {
    for (int i = 0; i < n_members; ++i) {
      advance(op.drift, ens.members[i], cfg.dyn.obs_every_steps, op.dt,
              op.noise_std, rng, op.substeps);
    }
    data.backgrounds.row(k) = ens.mean().transpose();
    const Vector y = nature.pairgen_obs.values.row(k).transpose();
    if (cfg.pairgen.method == "enrda") {
      ens = enrda_analysis(ens, y, spec.noise_cov, cfg.pairgen.sinkhorn_gamma,
                           cfg.pairgen.sinkhorn_iters, rng);
    } else if (cfg.pairgen.method == "enkf") {
      ens = enkf_analysis(ens, y, spec, rng);
    } else {
      throw ConfigError("pairgen.method must be enrda or enkf");
    }
    data.analyses.row(k) = ens.mean().transpose();
  }
  compute_dataset_stats(data);
  return data;
}

Checkpoint train_checkpoint(const ExperimentConfig& cfg, const PairDataset& data,
                            std::vector<EpochRecord>* history) {
  if (cfg.train.widths.empty()) throw ConfigError("train.widths missing");
  RngStream rng = seeded_rng(cfg.train.seed, kStreamTrain);
  TrainResult result = train(data, cfg.train, rng);
  if (history) *history = result.history;
  Checkpoint ckpt;
  ckpt.net = std::move(result.net);
  ckpt.norm_mean = std::move(result.norm_mean);
  ckpt.norm_std = std::move(result.norm_std);
  ckpt.testbed = cfg.testbed;
  ckpt.beta = cfg.train.beta;
  ckpt.seed = cfg.train.seed;
  return ckpt;
}

Method method_from_string(const std::string& name) {
  if (name == "freerun") return Method::freerun;
  if (name == "3dvar") return Method::threedvar;
  if (name == "pnpda") return Method::pnpda;
  throw ConfigError("unknown method: " + name);
}

std::string to_string(Method m) {
  switch (m) {
    case Method::freerun: return "freerun";
    case Method::threedvar: return "3dvar";
    case Method::pnpda: return "pnpda";
  }
  return "?";
}

void ResultTable::append(ResultTable other) {
  records.insert(records.end(), other.records.begin(), other.records.end());
  statuses.insert(statuses.end(), other.statuses.begin(), other.statuses.end());
}

ResultTable run_cyclic_da(Method method, const ExperimentConfig& cfg,
                          const Trajectory& truth, const ObservationSpec& spec,
                          const Checkpoint* ckpt, int run_index,
                          double axis_value) {
  const int d = state_dim(cfg);
  const int every = cfg.dyn.obs_every_steps;
  const int skip_steps = cfg.eval.skip_cycles * every;
  if (skip_steps >= truth.size() - 1) {
    throw ConfigError("run_cyclic_da: eval.skip_cycles exceeds the record");
  }
  const int max_cycles = (truth.size() - 1 - skip_steps) / every;
  const int n_cycles = std::min(cfg.eval.n_cycles, max_cycles);
  if (n_cycles < 1) throw ConfigError("run_cyclic_da: truth too short");
  if (method == Method::pnpda && ckpt == nullptr) {
    throw ConfigError("run_cyclic_da: pnpda needs a checkpoint");
  }

  RngStream run_stream = seeded_rng(cfg.seed, kStreamRunBase + run_index);
  RngStream obs_rng = run_stream.child(0);
  RngStream init_rng = run_stream.child(1);
  RngStream method_rng = run_stream.child(2);
  RngStream forecast_rng = run_stream.child(3);

  Trajectory window = segment_of(truth, skip_steps, n_cycles * every);
  ObservationBatch obs = make_observations(window, spec, every, obs_rng);

  Vector x = window.states.row(0).transpose();
  for (int i = 0; i < d; ++i) x[i] += cfg.eval.init_spread * init_rng.normal();

  SteppedModel op = operational_model(cfg);

  ResultTable table;
  RunStatus status{method, axis_value, run_index, true, 0, ""};
  try {
    SpdMatrix B = (method == Method::threedvar)
                      ? build_B(d, cfg.threedvar)
                      : SpdMatrix::identity(1);
    // The recorded per-cycle error is the RMS over the cycle's trajectory
    // (forecast states plus the post-analysis state), so per-run RMSE over
    // cycles equals the step-wise RMSE over the whole cyclic trajectory.
    Vector cycle_sq(d);
    for (int k = 0; k < n_cycles; ++k) {
      cycle_sq.setZero();
      for (int step = 1; step < every; ++step) {
        advance(op.drift, x, 1, op.dt, op.noise_std, forecast_rng, op.substeps);
        const Vector truth_s =
            window.states.row(k * every + step).transpose();
        cycle_sq += (x - truth_s).cwiseProduct(x - truth_s);
      }
      advance(op.drift, x, 1, op.dt, op.noise_std, forecast_rng, op.substeps);
      const Vector y = obs.values.row(k).transpose();
      Vector xa;
      switch (method) {
        case Method::freerun:
          xa = x;
          break;
        case Method::threedvar:
          xa = threedvar_analysis(x, y, spec, B);
          break;
        case Method::pnpda: {
          RngStream cycle_rng = method_rng.child(static_cast<std::uint64_t>(k));
          if (cfg.pnp.n_samples > 1) {
            EnsembleAnalysis ea =
                analyze_ensemble(*ckpt, x, y, spec, cfg.pnp, cycle_rng);
            status.n_fallbacks += ea.n_failed;
            xa = ea.mean;
          } else {
            bool fell_back = false;
            xa = analyze_3d(*ckpt, x, y, spec, cfg.pnp, cycle_rng, &fell_back);
            if (fell_back) ++status.n_fallbacks;
          }
          break;
        }
      }
      if (!xa.allFinite()) {
        throw NonFiniteState("analysis produced a non-finite state");
      }
      const Vector truth_k = window.states.row((k + 1) * every).transpose();
      cycle_sq += (xa - truth_k).cwiseProduct(xa - truth_k);
      for (int c = 0; c < d; ++c) {
        table.records.push_back({method, axis_value, run_index, k, c,
                                 std::sqrt(cycle_sq[c] / every)});
      }
      x = xa;
    }
  } catch (const std::exception& e) {
    status.ok = false;
    status.message = e.what();
    table.records.clear();  // failed runs carry a status row, no records
  }
  table.statuses.push_back(status);
  return table;
}

SweepAxis sweep_axis_from_string(const std::string& name) {
  if (name == "obs_fraction") return SweepAxis::obs_fraction;
  if (name == "obs_noise") return SweepAxis::obs_noise;
  throw ConfigError("unknown sweep axis: " + name);
}

AblateAxis ablate_axis_from_string(const std::string& name) {
  if (name == "iters") return AblateAxis::iters;
  if (name == "alpha") return AblateAxis::alpha;
  throw ConfigError("unknown ablation axis: " + name);
}

namespace {

// Runs `n_cells` independent jobs on a small worker pool; each job writes
// only its own slot, so the combined output order is deterministic.
void run_cells(int n_cells, int n_threads,
               const std::function<void(int)>& job) {
  if (n_threads <= 0) {
    n_threads = static_cast<int>(std::thread::hardware_concurrency());
  }
  n_threads = std::max(1, std::min(n_threads, n_cells));
  if (n_threads == 1) {
    for (int i = 0; i < n_cells; ++i) job(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> workers;
  workers.reserve(n_threads);
  for (int t = 0; t < n_threads; ++t) {
    workers.emplace_back([&]() {
      for (int i = next.fetch_add(1); i < n_cells; i = next.fetch_add(1)) {
        job(i);
      }
    });
  }
  for (auto& w : workers) w.join();
}

}  // namespace

ResultTable sweep(const ExperimentConfig& cfg, const Trajectory& truth,
                  SweepAxis axis, const std::vector<double>& values,
                  const std::vector<Method>& methods, int n_runs,
                  const Checkpoint* ckpt, int n_threads) {
  if (values.empty()) throw ConfigError("sweep: values must be nonempty");
  if (methods.empty()) throw ConfigError("sweep: methods must be nonempty");
  const int d = state_dim(cfg);

  struct Cell {
    double value;
    Method method;
    int run;
  };
  std::vector<Cell> cells;
  for (double v : values) {
    for (Method m : methods) {
      for (int r = 0; r < n_runs; ++r) cells.push_back({v, m, r});
    }
  }

  std::vector<ResultTable> slots(cells.size());
  run_cells(static_cast<int>(cells.size()), n_threads, [&](int i) {
    const Cell& cell = cells[i];
    ObservationSpec spec = [&]() {
      if (axis == SweepAxis::obs_fraction) {
        int m = static_cast<int>(std::ceil(cell.value * d - 1e-12));
        m = std::max(1, std::min(m, d));
        return obs_spec_for(cfg, equally_spaced_indices(d, m),
                            cfg.eval.obs_sigma);
      }
      return obs_spec_for(cfg, cfg.eval.obs_indices, cell.value);
    }();
    slots[i] = run_cyclic_da(cell.method, cfg, truth, spec, ckpt, cell.run,
                             cell.value);
  });

  ResultTable table;
  for (auto& slot : slots) table.append(std::move(slot));
  return table;
}

ResultTable ablate(const ExperimentConfig& cfg, const Trajectory& truth,
                   AblateAxis axis, const std::vector<double>& values,
                   int n_runs, const Checkpoint& ckpt, int n_threads) {
  if (values.empty()) throw ConfigError("ablate: values must be nonempty");
  ObservationSpec spec = eval_obs_spec(cfg);

  struct Cell {
    double value;
    int run;
  };
  std::vector<Cell> cells;
  for (double v : values) {
    for (int r = 0; r < n_runs; ++r) cells.push_back({v, r});
  }

  std::vector<ResultTable> slots(cells.size());
  run_cells(static_cast<int>(cells.size()), n_threads, [&](int i) {
    ExperimentConfig local = cfg;
    if (axis == AblateAxis::iters) {
      local.pnp.n_iter = static_cast<int>(std::lround(cells[i].value));
    } else {
      local.pnp.alpha = cells[i].value;
    }
    slots[i] = run_cyclic_da(Method::pnpda, local, truth, spec, &ckpt,
                             cells[i].run, cells[i].value);
  });

  ResultTable table;
  for (auto& slot : slots) table.append(std::move(slot));
  return table;
}

Vector rmse_per_component(const Trajectory& analysis, const Trajectory& truth) {
  if (analysis.size() != truth.size() || analysis.dim() != truth.dim()) {
    throw MisalignedTimes("rmse: trajectory shapes differ");
  }
  for (int i = 0; i < analysis.size(); ++i) {
    if (std::abs(analysis.times[i] - truth.times[i]) > 1e-9) {
      throw MisalignedTimes("rmse: times differ at index " + std::to_string(i));
    }
  }
  Matrix diff = analysis.states - truth.states;
  return (diff.array().square().colwise().mean()).sqrt().transpose();
}

double rmse_aggregate(const Trajectory& analysis, const Trajectory& truth) {
  Vector per = rmse_per_component(analysis, truth);  // validates alignment
  Matrix diff = analysis.states - truth.states;
  return std::sqrt(diff.array().square().mean());
}

namespace {

struct CellKey {
  int method;
  double axis_value;
  bool operator<(const CellKey& o) const {
    if (method != o.method) return method < o.method;
    return axis_value < o.axis_value;
  }
};

}  // namespace

std::vector<AggregateRow> aggregate(const ResultTable& table) {
  // (method, axis) -> run -> component -> (sum of squares, count)
  std::map<CellKey, std::map<int, std::map<int, std::pair<double, int>>>> acc;
  int max_component = -1;
  for (const auto& rec : table.records) {
    auto& cell =
        acc[{static_cast<int>(rec.method), rec.axis_value}][rec.run][rec.component];
    cell.first += rec.error * rec.error;
    cell.second += 1;
    max_component = std::max(max_component, rec.component);
  }

  std::map<CellKey, std::pair<int, int>> status_counts;  // ok / failed
  for (const auto& st : table.statuses) {
    auto& c = status_counts[{static_cast<int>(st.method), st.axis_value}];
    if (st.ok) {
      ++c.first;
    } else {
      ++c.second;
    }
  }

  std::vector<AggregateRow> rows;
  for (const auto& [key, runs] : acc) {
    const auto counts = status_counts.count(key) ? status_counts.at(key)
                                                 : std::pair<int, int>{0, 0};
    for (int comp = -1; comp <= max_component; ++comp) {
      std::vector<double> per_run;
      for (const auto& [run, comps] : runs) {
        double ss = 0.0;
        int n = 0;
        if (comp < 0) {
          for (const auto& [c, v] : comps) {
            ss += v.first;
            n += v.second;
          }
        } else if (comps.count(comp)) {
          ss = comps.at(comp).first;
          n = comps.at(comp).second;
        }
        if (n > 0) per_run.push_back(std::sqrt(ss / n));
      }
      if (per_run.empty()) continue;
      double mean = 0.0;
      for (double v : per_run) mean += v;
      mean /= static_cast<double>(per_run.size());
      double var = 0.0;
      for (double v : per_run) var += (v - mean) * (v - mean);
      const double stdev =
          per_run.size() > 1 ? std::sqrt(var / (per_run.size() - 1)) : 0.0;
      rows.push_back({static_cast<Method>(key.method), key.axis_value, comp,
                      mean, stdev, counts.first, counts.second});
    }
  }
  return rows;
}

std::vector<double> per_run_rmse(const ResultTable& table, Method method,
                                 double axis_value, int component) {
  std::map<int, std::pair<double, int>> by_run;
  for (const auto& rec : table.records) {
    if (rec.method != method || rec.axis_value != axis_value) continue;
    if (component >= 0 && rec.component != component) continue;
    auto& cell = by_run[rec.run];
    cell.first += rec.error * rec.error;
    cell.second += 1;
  }
  std::vector<double> out;
  for (const auto& [run, cell] : by_run) {
    out.push_back(std::sqrt(cell.first / cell.second));
  }
  return out;
}

void write_records_csv(const std::string& path, const ResultTable& table) {
  std::string text = "method,axis_value,run,cycle,component,error\n";
  for (const auto& rec : table.records) {
    text += to_string(rec.method);
    text += ',';
    text += format_double(rec.axis_value);
    text += ',';
    text += std::to_string(rec.run);
    text += ',';
    text += std::to_string(rec.cycle);
    text += ',';
    text += std::to_string(rec.component);
    text += ',';
    text += format_double(rec.error);
    text += '\n';
  }
  write_text_file(path, text);
}

void write_aggregate_csv(const std::string& path,
                         const std::vector<AggregateRow>& rows) {
  std::string text =
      "method,axis_value,component,rmse_mean,rmse_std,n_success,n_failed\n";
  for (const auto& row : rows) {
    text += to_string(row.method);
    text += ',';
    text += format_double(row.axis_value);
    text += ',';
    text += std::to_string(row.component);
    text += ',';
    text += format_double(row.rmse_mean);
    text += ',';
    text += format_double(row.rmse_std);
    text += ',';
    text += std::to_string(row.n_success);
    text += ',';
    text += std::to_string(row.n_failed);
    text += '\n';
  }
  write_text_file(path, text);
}

void write_history_csv(const std::string& path,
                       const std::vector<EpochRecord>& history) {
  std::string text = "epoch,train_loss,val_loss,lr\n";
  for (const auto& h : history) {
    text += std::to_string(h.epoch);
    text += ',';
    text += format_double(h.train_loss);
    text += ',';
    text += format_double(h.val_loss);
    text += ',';
    text += format_double(h.lr);
    text += '\n';
  }
  write_text_file(path, text);
}

void write_manifest(const std::string& path, const std::string& command,
                    const ExperimentConfig& cfg,
                    const std::vector<std::string>& outputs) {
  const std::string canonical = config_to_json_text(cfg);
  json manifest{{"format_version", 1},
                {"command", command},
                {"seed", cfg.seed},
                {"config_hash", "fnv1a:" + fnv1a_hex(canonical)},
                {"outputs", outputs},
                {"config", json::parse(canonical)}};
  write_text_file(path, manifest.dump(2) + "\n");
}

Trajectory segment_of(const Trajectory& traj, int start_step, int n_steps) {
  if (start_step < 0 || start_step + n_steps + 1 > traj.size()) {
    throw ConfigError("segment_of: window outside the trajectory");
  }
  Trajectory out;
  out.times.assign(traj.times.begin() + start_step,
                   traj.times.begin() + start_step + n_steps + 1);
  out.states = traj.states.middleRows(start_step, n_steps + 1);
  return out;
}

Trajectory head_of(const Trajectory& traj, int n_steps) {
  if (n_steps + 1 > traj.size()) {
    throw ConfigError("head_of: trajectory shorter than requested window");
  }
  Trajectory out;
  out.times.assign(traj.times.begin(), traj.times.begin() + n_steps + 1);
  out.states = traj.states.topRows(n_steps + 1);
  return out;
}

}  // namespace pnpda
