#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pnpda/linalg.hpp"
#include "pnpda/rng.hpp"
#include "pnpda/transport.hpp"

namespace pnpda {

// --- Fourier time embedding ---

// Fixed random frequencies, frozen at construction and serialized with the
// model. Maps tau in [0,1] to [sin(2 pi tau g), cos(2 pi tau g)].
struct FourierEmbed {
  Vector freqs;  // d_tau/2 entries, N(0,1) scaled by 10

  int dim() const { return 2 * static_cast<int>(freqs.size()); }
};

FourierEmbed make_fourier_embed(int d_tau, RngStream& rng);
Vector fourier_time_embed(double tau, const FourierEmbed& embed);

// --- conditional velocity network ---

constexpr double kLayerNormEps = 1e-5;

struct DenseLayer {
  Matrix W;         // (out, in)
  Vector b;         // out
  Vector ln_scale;  // out
  Vector ln_shift;  // out
  bool residual = false;
};

// MLP predicting the flow-matching velocity from [x, embed(tau), xb].
// Hidden blocks are Linear -> LayerNorm -> SiLU, with a residual add when a
// block's input and output widths match; a final linear layer projects back
// to the state dimension.
struct VelocityNet {
  FourierEmbed embed;
  std::vector<DenseLayer> hidden;
  Matrix w_out;
  Vector b_out;
  int state_dim = 0;

  int input_dim() const { return 2 * state_dim + embed.dim(); }
  std::vector<int> widths() const;
  std::int64_t trainable_parameter_count() const;
};

VelocityNet make_velocity_net(int state_dim, const std::vector<int>& widths,
                              int d_tau, RngStream& rng);

// Batched forward pass; rows are samples. Inputs must already be in
// normalized coordinates.
Matrix net_forward(const VelocityNet& net, const Matrix& x, const Vector& tau,
                   const Matrix& xb);
Vector net_forward_one(const VelocityNet& net, const Vector& x, double tau,
                       const Vector& xb);

// Gradient holder mirroring the trainable tensors (embed is frozen).
struct NetTensors {
  std::vector<DenseLayer> hidden;
  Matrix w_out;
  Vector b_out;
};

NetTensors zeros_like(const VelocityNet& net);

// Exact reverse-mode gradients of the mean-squared velocity loss
// (1/N) sum_i ||v_theta(x_i, tau_i, xb_i) - target_i||^2. Returns the loss.
double net_backward(const VelocityNet& net, const Matrix& x, const Vector& tau,
                    const Matrix& xb, const Matrix& targets, NetTensors& grads);

// Number of net_backward invocations in this process; the analysis loop must
// never move it.
std::uint64_t backward_invocation_count();

// Flattened views in the documented serialization order (per hidden layer:
// W row-major, b, ln_scale, ln_shift; then w_out row-major, b_out). The
// frozen embedding is not part of the trainable vector.
Vector flatten_trainable(const VelocityNet& net);
void set_trainable(VelocityNet& net, const Vector& params);
Vector flatten_tensors(const NetTensors& t);

// --- AdamW ---

struct AdamWState {
  NetTensors m;
  NetTensors v;
  long t = 0;
};

// Decoupled weight decay: p <- p - lr*wd*p applied separately from the
// bias-corrected Adam moment update.
void adamw_step(VelocityNet& params, const NetTensors& grads, AdamWState& state,
                double lr, double weight_decay, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8);

// --- datasets and normalization ---

struct PairDataset {
  Matrix backgrounds;  // rows = x^b
  Matrix analyses;     // rows = x^a
  std::string testbed;
  std::string generator;  // method that produced the analyses
  std::uint64_t seed = 0;
  Vector stat_mean;  // descriptive whole-dataset stats
  Vector stat_std;

  int size() const { return static_cast<int>(backgrounds.rows()); }
  int dim() const { return static_cast<int>(backgrounds.cols()); }
};

// Per-component mean/std over the stacked background and analysis rows;
// std is floored at 1e-8.
void standardization_stats(const Matrix& xb, const Matrix& xa, Vector& mean,
                           Vector& std);
void compute_dataset_stats(PairDataset& data);

Matrix normalize_rows(const Matrix& x, const Vector& mean, const Vector& std);
Matrix denormalize_rows(const Matrix& x, const Vector& mean, const Vector& std);
Vector normalize_vec(const Vector& x, const Vector& mean, const Vector& std);
Vector denormalize_vec(const Vector& x, const Vector& mean, const Vector& std);

// --- minibatch coupling ---

struct TrainingBatch {
  Matrix xb;      // conditioning backgrounds, source order
  Matrix z0;      // reference draws, N(0, I_d)
  Vector tau;     // U[0,1] per sample
  Matrix z_tau;   // z0 + tau * vstar
  Matrix vstar;   // xa_{j(i)} - z0_i
  std::vector<int> coupling;  // j(i)
};

// beta > 0: couple via the exact EMD assignment on the beta-augmented cost;
// beta = 0: identity pairing. Draw order: all z0 rows, then all tau.
TrainingBatch make_training_batch(const Matrix& xb, const Matrix& xa,
                                  double beta, RngStream& rng);

// --- training ---

struct TrainConfig {
  double lr = 3e-4;
  double weight_decay = 1e-5;
  int batch = 32;
  int max_epochs = 1000;
  double plateau_factor = 0.5;
  int plateau_patience = 10;
  int early_stop_patience = 50;
  double beta = 1000.0;  // OT background penalty
  std::uint64_t seed = 0;
  double val_fraction = 0.1;
  std::vector<int> widths;
  int d_tau = 32;
};

struct EpochRecord {
  int epoch;
  double train_loss;
  double val_loss;
  double lr;
};

struct TrainResult {
  VelocityNet net;
  Vector norm_mean;
  Vector norm_std;
  std::vector<EpochRecord> history;
  int best_epoch = -1;
  double best_val_loss = 0.0;
};

// Epoch loop with per-minibatch OT coupling, AdamW, plateau LR halving and
// early stopping on a frozen validation coupling; returns the
// best-validation checkpoint.
TrainResult train(const PairDataset& data, const TrainConfig& cfg,
                  RngStream& rng);

// --- checkpoints ---

struct Checkpoint {
  VelocityNet net;
  Vector norm_mean;
  Vector norm_std;
  std::string testbed;
  double beta = 0.0;
  std::uint64_t seed = 0;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace pnpda
