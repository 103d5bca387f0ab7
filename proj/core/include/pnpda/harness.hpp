#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pnpda/analysis.hpp"
#include "pnpda/baselines.hpp"
#include "pnpda/dynamics.hpp"
#include "pnpda/flowmatch.hpp"
#include "pnpda/observations.hpp"

namespace pnpda {

// Stream-id allocation under the experiment base seed: 0 nature run,
// 1 pair-generation observations, 2 pair-generation DA loop, and
// 1000 + r for evaluation run r (children: 0 observation noise, 1 initial
// background, 2 analysis draws, 3 forecast noise). Training draws come from
// the training seed on stream 3.
inline constexpr std::uint64_t kStreamNature = 0;
inline constexpr std::uint64_t kStreamPairgenObs = 1;
inline constexpr std::uint64_t kStreamPairgenLoop = 2;
inline constexpr std::uint64_t kStreamTrain = 3;
inline constexpr std::uint64_t kStreamRunBase = 1000;

struct DynamicsSection {
  double dt = 0.01;
  int obs_every_steps = 40;
  int spinup_steps = 0;
  int discard_steps = 0;
  int record_steps = 0;
  double operational_noise_std = 0.0;  // per recorded step
  L63Params l63_true = l63_true_params();
  L63Params l63_operational = l63_operational_params();
  L96Params l96;
  KsParams ks;
};

struct PairgenSection {
  std::string method = "enkf";  // "enrda" | "enkf"
  int n_members = 20;
  double init_spread = 1.0;
  double sinkhorn_gamma = 10.0;
  int sinkhorn_iters = 300;
  std::vector<int> obs_indices;
  double obs_sigma = 1.0;
  Matrix obs_correlation;  // state-component correlation; empty = identity
  int n_cycles = 0;        // cap on generated pairs; 0 = every observation
};

struct EvalSection {
  std::vector<int> obs_indices;
  double obs_sigma = 1.0;
  int n_cycles = 500;
  int n_runs = 10;
  double init_spread = 1.0;
  int skip_cycles = 0;  // offset into the truth record (disjoint from pairs)
};

struct ExperimentConfig {
  std::string testbed;  // "l63" | "l96" | "ks"
  std::uint64_t seed = 0;
  DynamicsSection dyn;
  PairgenSection pairgen;
  EvalSection eval;
  GaspariCohnSpec threedvar;
  TrainConfig train;
  PnpConfig pnp;
};

int state_dim(const ExperimentConfig& cfg);

ExperimentConfig config_from_json_text(const std::string& text);
ExperimentConfig load_config(const std::string& path);
// Canonical serialization (stable key order) used for hashing and manifests.
std::string config_to_json_text(const ExperimentConfig& cfg);

// Observation spec with covariance sigma^2 * C restricted to `indices`,
// where C is the configured state-component correlation (identity if unset).
ObservationSpec obs_spec_for(const ExperimentConfig& cfg,
                             const std::vector<int>& indices, double sigma);
ObservationSpec pairgen_obs_spec(const ExperimentConfig& cfg);
ObservationSpec eval_obs_spec(const ExperimentConfig& cfg);

// --- pipelines ---

struct NatureRun {
  Trajectory truth;  // DA-state trajectory (slow projection for l96)
  ObservationBatch pairgen_obs;
};

NatureRun generate_nature_run(const ExperimentConfig& cfg);

PairDataset generate_training_pairs(const ExperimentConfig& cfg,
                                    const NatureRun& nature);

// flowmatch::train driven by the experiment config (training stream from the
// training seed); wraps the result into a checkpoint.
Checkpoint train_checkpoint(const ExperimentConfig& cfg,
                            const PairDataset& data,
                            std::vector<EpochRecord>* history = nullptr);

// --- cyclic DA evaluation ---

enum class Method { freerun, threedvar, pnpda };

Method method_from_string(const std::string& name);
std::string to_string(Method m);

struct CycleRecord {
  Method method;
  double axis_value;  // sweep/ablation coordinate; 0 for plain runs
  int run;
  int cycle;
  int component;
  double error;  // analysis minus truth
};

struct RunStatus {
  Method method;
  double axis_value;
  int run;
  bool ok;
  int n_fallbacks;  // analyses that fell back to the background
  std::string message;
};

struct ResultTable {
  std::vector<CycleRecord> records;
  std::vector<RunStatus> statuses;

  void append(ResultTable other);
};

// One cyclic DA run: alternate an operational-model forecast with the
// method's analysis at each observation time, recording per-cycle
// per-component analysis errors against the truth. Failed runs keep their
// status row but contribute no records.
ResultTable run_cyclic_da(Method method, const ExperimentConfig& cfg,
                          const Trajectory& truth, const ObservationSpec& spec,
                          const Checkpoint* ckpt, int run_index,
                          double axis_value = 0.0);

enum class SweepAxis { obs_fraction, obs_noise };
enum class AblateAxis { iters, alpha };

SweepAxis sweep_axis_from_string(const std::string& name);
AblateAxis ablate_axis_from_string(const std::string& name);

// Cross product of (axis value x method x run); cells run in parallel worker
// threads with pre-split rng streams and deterministic output order.
ResultTable sweep(const ExperimentConfig& cfg, const Trajectory& truth,
                  SweepAxis axis, const std::vector<double>& values,
                  const std::vector<Method>& methods, int n_runs,
                  const Checkpoint* ckpt, int n_threads = 0);

// PnP-DA hyperparameter sweep (iteration count or gradient schedule alpha).
ResultTable ablate(const ExperimentConfig& cfg, const Trajectory& truth,
                   AblateAxis axis, const std::vector<double>& values,
                   int n_runs, const Checkpoint& ckpt, int n_threads = 0);

// --- metrics ---

// Per-component RMSE over aligned trajectories; throws MisalignedTimes.
Vector rmse_per_component(const Trajectory& analysis, const Trajectory& truth);
double rmse_aggregate(const Trajectory& analysis, const Trajectory& truth);

struct AggregateRow {
  Method method;
  double axis_value;
  int component;  // -1 = aggregate over components
  double rmse_mean;
  double rmse_std;
  int n_success;
  int n_failed;
};

std::vector<AggregateRow> aggregate(const ResultTable& table);

// Per-run RMSE for one (method, axis_value) cell, ordered by run index;
// component -1 aggregates over components.
std::vector<double> per_run_rmse(const ResultTable& table, Method method,
                                 double axis_value, int component = -1);

// --- CSV + manifests ---

void write_records_csv(const std::string& path, const ResultTable& table);
void write_aggregate_csv(const std::string& path,
                         const std::vector<AggregateRow>& rows);
void write_history_csv(const std::string& path,
                       const std::vector<EpochRecord>& history);

void write_manifest(const std::string& path, const std::string& command,
                    const ExperimentConfig& cfg,
                    const std::vector<std::string>& outputs);

// First n_steps+1 recorded states of a trajectory.
Trajectory head_of(const Trajectory& traj, int n_steps);
// n_steps+1 recorded states starting at start_step.
Trajectory segment_of(const Trajectory& traj, int start_step, int n_steps);

}  // namespace pnpda
