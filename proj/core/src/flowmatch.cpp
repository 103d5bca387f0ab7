#include "pnpda/flowmatch.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <string>

#include "pnpda/errors.hpp"

namespace pnpda {

namespace {

std::atomic<std::uint64_t> g_backward_count{0};

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }

inline double silu_grad(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

// Unbiased bounded draw (Lemire); bias is negligible for n << 2^64 but the
// fixed-width multiply keeps shuffles platform-stable.
inline std::uint64_t bounded_u64(RngStream& rng, std::uint64_t n) {
  unsigned __int128 p = static_cast<unsigned __int128>(rng.next_u64()) * n;
  return static_cast<std::uint64_t>(p >> 64);
}

void fisher_yates(std::vector<int>& idx, RngStream& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(bounded_u64(rng, i));
    std::swap(idx[i - 1], idx[j]);
  }
}

struct LayerCache {
  Matrix input;      // N x in
  Matrix hat;        // N x out, normalized pre-scale activations
  Vector inv_sigma;  // N
  Matrix ln_out;     // N x out, SiLU input
};

struct ForwardCache {
  Matrix z0;  // concatenated input
  std::vector<LayerCache> layers;
  Matrix last_hidden;
  Matrix output;
};

Matrix embed_batch(const FourierEmbed& e, const Vector& tau) {
  const Eigen::Index n = tau.size();
  const Eigen::Index half = e.freqs.size();
  Matrix out(n, 2 * half);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < half; ++k) {
      const double angle = 2.0 * M_PI * tau[i] * e.freqs[k];
      out(i, k) = std::sin(angle);
      out(i, half + k) = std::cos(angle);
    }
  }
  return out;
}

Matrix concat_inputs(const VelocityNet& net, const Matrix& x, const Vector& tau,
                     const Matrix& xb) {
  const Eigen::Index n = x.rows();
  const int d = net.state_dim;
  if (x.cols() != d || xb.cols() != d || xb.rows() != n || tau.size() != n) {
    throw ConfigError("net_forward: input dimension mismatch");
  }
  Matrix z(n, net.input_dim());
  z.leftCols(d) = x;
  z.middleCols(d, net.embed.dim()) = embed_batch(net.embed, tau);
  z.rightCols(d) = xb;
  return z;
}

Matrix forward_impl(const VelocityNet& net, const Matrix& x, const Vector& tau,
                    const Matrix& xb, ForwardCache* cache) {
  Matrix h = concat_inputs(net, x, tau, xb);
  if (cache) {
    cache->z0 = h;
    cache->layers.resize(net.hidden.size());
  }
  for (std::size_t l = 0; l < net.hidden.size(); ++l) {
    const DenseLayer& layer = net.hidden[l];
    Matrix a = h * layer.W.transpose();
    a.rowwise() += layer.b.transpose();

    const Eigen::Index n = a.rows();
    const Eigen::Index w = a.cols();
    Matrix hat(n, w);
    Vector inv_sigma(n);
    for (Eigen::Index r = 0; r < n; ++r) {
      const double mu = a.row(r).mean();
      const double var = (a.row(r).array() - mu).square().mean();
      const double is = 1.0 / std::sqrt(var + kLayerNormEps);
      inv_sigma[r] = is;
      hat.row(r) = (a.row(r).array() - mu) * is;
    }
    Matrix ln = hat.array().rowwise() * layer.ln_scale.transpose().array();
    ln.array().rowwise() += layer.ln_shift.transpose().array();

    Matrix act = ln.unaryExpr([](double v) { return silu(v); });
    if (cache) {
      LayerCache& lc = cache->layers[l];
      lc.input = h;
      lc.hat = std::move(hat);
      lc.inv_sigma = std::move(inv_sigma);
      lc.ln_out = std::move(ln);
    }
    if (layer.residual) {
      h = act + h;
    } else {
      h = std::move(act);
    }
  }
  Matrix out = h * net.w_out.transpose();
  out.rowwise() += net.b_out.transpose();
  if (cache) {
    cache->last_hidden = std::move(h);
    cache->output = out;
  }
  return out;
}

}  // namespace

FourierEmbed make_fourier_embed(int d_tau, RngStream& rng) {
  if (d_tau < 2 || d_tau % 2 != 0) {
    throw ConfigError("make_fourier_embed: d_tau must be a positive even number");
  }
  FourierEmbed e;
  e.freqs.resize(d_tau / 2);
  for (Eigen::Index i = 0; i < e.freqs.size(); ++i) {
    e.freqs[i] = 10.0 * rng.normal();
  }
  return e;
}

Vector fourier_time_embed(double tau, const FourierEmbed& embed) {
  const Eigen::Index half = embed.freqs.size();
  Vector out(2 * half);
  for (Eigen::Index k = 0; k < half; ++k) {
    const double angle = 2.0 * M_PI * tau * embed.freqs[k];
    out[k] = std::sin(angle);
    out[half + k] = std::cos(angle);
  }
  return out;
}

std::vector<int> VelocityNet::widths() const {
  std::vector<int> w;
  for (const auto& layer : hidden) w.push_back(static_cast<int>(layer.W.rows()));
  return w;
}

std::int64_t VelocityNet::trainable_parameter_count() const {
  std::int64_t n = 0;
  for (const auto& l : hidden) {
    n += l.W.size() + l.b.size() + l.ln_scale.size() + l.ln_shift.size();
  }
  n += w_out.size() + b_out.size();
  return n;
}

VelocityNet make_velocity_net(int state_dim, const std::vector<int>& widths,
                              int d_tau, RngStream& rng) {
  if (state_dim < 1) throw ConfigError("make_velocity_net: state_dim < 1");
  if (widths.empty()) throw ConfigError("make_velocity_net: no hidden widths");
  VelocityNet net;
  net.state_dim = state_dim;
  net.embed = make_fourier_embed(d_tau, rng);

  auto uniform_init = [&rng](Matrix& m, int fan_in) {
    const double k = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        m(i, j) = k * (2.0 * rng.uniform() - 1.0);
      }
    }
  };
  auto uniform_init_vec = [&rng](Vector& v, int fan_in) {
    const double k = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      v[i] = k * (2.0 * rng.uniform() - 1.0);
    }
  };

  int in_dim = net.input_dim();
  for (int width : widths) {
    DenseLayer layer;
    layer.W.resize(width, in_dim);
    layer.b.resize(width);
    uniform_init(layer.W, in_dim);
    uniform_init_vec(layer.b, in_dim);
    layer.ln_scale = Vector::Ones(width);
    layer.ln_shift = Vector::Zero(width);
    layer.residual = (width == in_dim);
    net.hidden.push_back(std::move(layer));
    in_dim = width;
  }
  net.w_out.resize(state_dim, in_dim);
  net.b_out.resize(state_dim);
  uniform_init(net.w_out, in_dim);
  uniform_init_vec(net.b_out, in_dim);
  return net;
}

Matrix net_forward(const VelocityNet& net, const Matrix& x, const Vector& tau,
                   const Matrix& xb) {
  return forward_impl(net, x, tau, xb, nullptr);
}

Vector net_forward_one(const VelocityNet& net, const Vector& x, double tau,
                       const Vector& xb) {
  Matrix xm = x.transpose();
  Matrix xbm = xb.transpose();
  Vector taum(1);
  taum[0] = tau;
  return net_forward(net, xm, taum, xbm).row(0).transpose();
}

NetTensors zeros_like(const VelocityNet& net) {
  NetTensors t;
  for (const auto& l : net.hidden) {
    DenseLayer g;
    g.W = Matrix::Zero(l.W.rows(), l.W.cols());
    g.b = Vector::Zero(l.b.size());
    g.ln_scale = Vector::Zero(l.ln_scale.size());
    g.ln_shift = Vector::Zero(l.ln_shift.size());
    g.residual = l.residual;
    t.hidden.push_back(std::move(g));
  }
  t.w_out = Matrix::Zero(net.w_out.rows(), net.w_out.cols());
  t.b_out = Vector::Zero(net.b_out.size());
  return t;
}

double net_backward(const VelocityNet& net, const Matrix& x, const Vector& tau,
                    const Matrix& xb, const Matrix& targets,
                    NetTensors& grads) {
  g_backward_count.fetch_add(1, std::memory_order_relaxed);
  const Eigen::Index n = x.rows();
  if (n == 0) throw ConfigError("net_backward: empty batch");

  ForwardCache cache;
  Matrix v = forward_impl(net, x, tau, xb, &cache);
  Matrix diff = v - targets;
  const double loss = diff.array().square().sum() / static_cast<double>(n);

  if (grads.hidden.size() != net.hidden.size()) grads = zeros_like(net);

  Matrix d_out = (2.0 / static_cast<double>(n)) * diff;
  grads.w_out = d_out.transpose() * cache.last_hidden;
  grads.b_out = d_out.colwise().sum().transpose();
  Matrix d_h = d_out * net.w_out;

  for (int l = static_cast<int>(net.hidden.size()) - 1; l >= 0; --l) {
    const DenseLayer& layer = net.hidden[l];
    const LayerCache& lc = cache.layers[l];
    DenseLayer& g = grads.hidden[l];

    // Through SiLU.
    Matrix d_ln =
        d_h.array() * lc.ln_out.unaryExpr([](double u) { return silu_grad(u); }).array();

    // LayerNorm scale/shift and input.
    g.ln_shift = d_ln.colwise().sum().transpose();
    g.ln_scale = (d_ln.array() * lc.hat.array()).colwise().sum().transpose();

    Matrix d_hat = d_ln.array().rowwise() * layer.ln_scale.transpose().array();
    Matrix d_a(d_hat.rows(), d_hat.cols());
    const double w = static_cast<double>(d_hat.cols());
    for (Eigen::Index r = 0; r < d_hat.rows(); ++r) {
      const double m1 = d_hat.row(r).sum() / w;
      const double m2 = (d_hat.row(r).array() * lc.hat.row(r).array()).sum() / w;
      d_a.row(r) = lc.inv_sigma[r] *
                   (d_hat.row(r).array() - m1 - lc.hat.row(r).array() * m2);
    }

    // Linear layer.
    g.W = d_a.transpose() * lc.input;
    g.b = d_a.colwise().sum().transpose();
    Matrix d_input = d_a * layer.W;
    if (layer.residual) d_input += d_h;  // skip connection
    d_h = std::move(d_input);
  }
  return loss;
}

std::uint64_t backward_invocation_count() {
  return g_backward_count.load(std::memory_order_relaxed);
}

namespace {

template <typename Fn>
void visit_tensor_order(const VelocityNet& net, Fn&& fn) {
  for (std::size_t l = 0; l < net.hidden.size(); ++l) {
    fn(l, 0);  // W
    fn(l, 1);  // b
    fn(l, 2);  // ln_scale
    fn(l, 3);  // ln_shift
  }
  fn(net.hidden.size(), 0);  // w_out
  fn(net.hidden.size(), 1);  // b_out
}

void append_matrix_row_major(const Matrix& m, Vector& out, Eigen::Index& pos) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[pos++] = m(i, j);
  }
}

void read_matrix_row_major(Matrix& m, const Vector& in, Eigen::Index& pos) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = in[pos++];
  }
}

}  // namespace

Vector flatten_trainable(const VelocityNet& net) {
  Vector out(net.trainable_parameter_count());
  Eigen::Index pos = 0;
  for (const auto& l : net.hidden) {
    append_matrix_row_major(l.W, out, pos);
    for (Eigen::Index i = 0; i < l.b.size(); ++i) out[pos++] = l.b[i];
    for (Eigen::Index i = 0; i < l.ln_scale.size(); ++i) out[pos++] = l.ln_scale[i];
    for (Eigen::Index i = 0; i < l.ln_shift.size(); ++i) out[pos++] = l.ln_shift[i];
  }
  append_matrix_row_major(net.w_out, out, pos);
  for (Eigen::Index i = 0; i < net.b_out.size(); ++i) out[pos++] = net.b_out[i];
  return out;
}

void set_trainable(VelocityNet& net, const Vector& params) {
  if (params.size() != net.trainable_parameter_count()) {
    throw ConfigError("set_trainable: parameter count mismatch");
  }
  Eigen::Index pos = 0;
  for (auto& l : net.hidden) {
    read_matrix_row_major(l.W, params, pos);
    for (Eigen::Index i = 0; i < l.b.size(); ++i) l.b[i] = params[pos++];
    for (Eigen::Index i = 0; i < l.ln_scale.size(); ++i) l.ln_scale[i] = params[pos++];
    for (Eigen::Index i = 0; i < l.ln_shift.size(); ++i) l.ln_shift[i] = params[pos++];
  }
  read_matrix_row_major(net.w_out, params, pos);
  for (Eigen::Index i = 0; i < net.b_out.size(); ++i) net.b_out[i] = params[pos++];
}

Vector flatten_tensors(const NetTensors& t) {
  Eigen::Index total = 0;
  for (const auto& l : t.hidden) {
    total += l.W.size() + l.b.size() + l.ln_scale.size() + l.ln_shift.size();
  }
  total += t.w_out.size() + t.b_out.size();
  Vector out(total);
  Eigen::Index pos = 0;
  for (const auto& l : t.hidden) {
    append_matrix_row_major(l.W, out, pos);
    for (Eigen::Index i = 0; i < l.b.size(); ++i) out[pos++] = l.b[i];
    for (Eigen::Index i = 0; i < l.ln_scale.size(); ++i) out[pos++] = l.ln_scale[i];
    for (Eigen::Index i = 0; i < l.ln_shift.size(); ++i) out[pos++] = l.ln_shift[i];
  }
  append_matrix_row_major(t.w_out, out, pos);
  for (Eigen::Index i = 0; i < t.b_out.size(); ++i) out[pos++] = t.b_out[i];
  return out;
}

namespace {

template <typename P, typename G>
void adam_tensor(P& p, const G& g, P& m, P& v, long t, double lr, double wd,
                 double beta1, double beta2, double eps) {
  m.array() = beta1 * m.array() + (1.0 - beta1) * g.array();
  v.array() = beta2 * v.array() + (1.0 - beta2) * g.array().square();
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  // Decoupled decay first, then the moment step.
  p.array() -= lr * wd * p.array();
  p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
}

}  // namespace

void adamw_step(VelocityNet& params, const NetTensors& grads, AdamWState& state,
                double lr, double weight_decay, double beta1, double beta2,
                double eps) {
  if (state.m.hidden.size() != params.hidden.size() ||
      state.m.w_out.rows() != params.w_out.rows() ||
      state.m.w_out.cols() != params.w_out.cols()) {
    state.m = zeros_like(params);
    state.v = zeros_like(params);
    state.t = 0;
  }
  ++state.t;
  for (std::size_t l = 0; l < params.hidden.size(); ++l) {
    adam_tensor(params.hidden[l].W, grads.hidden[l].W, state.m.hidden[l].W,
                state.v.hidden[l].W, state.t, lr, weight_decay, beta1, beta2, eps);
    adam_tensor(params.hidden[l].b, grads.hidden[l].b, state.m.hidden[l].b,
                state.v.hidden[l].b, state.t, lr, weight_decay, beta1, beta2, eps);
    adam_tensor(params.hidden[l].ln_scale, grads.hidden[l].ln_scale,
                state.m.hidden[l].ln_scale, state.v.hidden[l].ln_scale, state.t,
                lr, weight_decay, beta1, beta2, eps);
    adam_tensor(params.hidden[l].ln_shift, grads.hidden[l].ln_shift,
                state.m.hidden[l].ln_shift, state.v.hidden[l].ln_shift, state.t,
                lr, weight_decay, beta1, beta2, eps);
  }
  adam_tensor(params.w_out, grads.w_out, state.m.w_out, state.v.w_out, state.t,
              lr, weight_decay, beta1, beta2, eps);
  adam_tensor(params.b_out, grads.b_out, state.m.b_out, state.v.b_out, state.t,
              lr, weight_decay, beta1, beta2, eps);
}

void standardization_stats(const Matrix& xb, const Matrix& xa, Vector& mean,
                           Vector& std) {
  const Eigen::Index d = xb.cols();
  const double n = static_cast<double>(xb.rows() + xa.rows());
  mean = (xb.colwise().sum() + xa.colwise().sum()).transpose() / n;
  Vector sq = Vector::Zero(d);
  for (Eigen::Index r = 0; r < xb.rows(); ++r) {
    sq += (xb.row(r).transpose() - mean).array().square().matrix();
  }
  for (Eigen::Index r = 0; r < xa.rows(); ++r) {
    sq += (xa.row(r).transpose() - mean).array().square().matrix();
  }
  std = (sq / n).array().sqrt().max(1e-8).matrix();
}

void compute_dataset_stats(PairDataset& data) {
  standardization_stats(data.backgrounds, data.analyses, data.stat_mean,
                        data.stat_std);
}

Matrix normalize_rows(const Matrix& x, const Vector& mean, const Vector& std) {
  return (x.rowwise() - mean.transpose()).array().rowwise() /
         std.transpose().array();
}

Matrix denormalize_rows(const Matrix& x, const Vector& mean, const Vector& std) {
  return (x.array().rowwise() * std.transpose().array()).matrix().rowwise() +
         mean.transpose();
}

Vector normalize_vec(const Vector& x, const Vector& mean, const Vector& std) {
  return (x - mean).array() / std.array();
}

Vector denormalize_vec(const Vector& x, const Vector& mean, const Vector& std) {
  return (x.array() * std.array()).matrix() + mean;
}

TrainingBatch make_training_batch(const Matrix& xb, const Matrix& xa,
                                  double beta, RngStream& rng) {
  const Eigen::Index n = xb.rows();
  const Eigen::Index d = xb.cols();
  if (n < 1) throw ConfigError("make_training_batch: empty batch");
  TrainingBatch tb;
  tb.xb = xb;
  tb.z0.resize(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) tb.z0(i, j) = rng.normal();
  }
  tb.tau.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) tb.tau[i] = rng.uniform();

  tb.coupling.resize(n);
  if (beta > 0.0) {
    Assignment a = emd_assignment(augmented_cost(tb.z0, xb, xa, beta));
    tb.coupling = a.perm;
  } else {
    for (Eigen::Index i = 0; i < n; ++i) tb.coupling[i] = static_cast<int>(i);
  }

  tb.vstar.resize(n, d);
  tb.z_tau.resize(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    tb.vstar.row(i) = xa.row(tb.coupling[i]) - tb.z0.row(i);
    tb.z_tau.row(i) = tb.z0.row(i) + tb.tau[i] * tb.vstar.row(i);
  }
  return tb;
}

TrainResult train(const PairDataset& data, const TrainConfig& cfg,
                  RngStream& rng) {
  if (data.size() < 2) throw ConfigError("train: dataset too small");
  if (cfg.widths.empty()) throw ConfigError("train: no hidden widths");
  if (cfg.lr <= 0.0 || cfg.batch < 1 || cfg.max_epochs < 1 || cfg.beta < 0.0 ||
      cfg.val_fraction <= 0.0 || cfg.val_fraction >= 1.0) {
    throw ConfigError("train: invalid training configuration");
  }
  const int n = data.size();
  const int d = data.dim();

  // 90/10 split by shuffle with the training stream.
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  fisher_yates(idx, rng);
  int n_val = std::max(1, static_cast<int>(std::lround(cfg.val_fraction * n)));
  n_val = std::min(n_val, n - 1);
  const int n_train = n - n_val;
  std::vector<int> train_idx(idx.begin(), idx.begin() + n_train);
  std::vector<int> val_idx(idx.begin() + n_train, idx.end());

  auto gather = [&](const Matrix& src, const std::vector<int>& rows) {
    Matrix out(rows.size(), src.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) out.row(r) = src.row(rows[r]);
    return out;
  };
  Matrix train_xb_raw = gather(data.backgrounds, train_idx);
  Matrix train_xa_raw = gather(data.analyses, train_idx);
  Matrix val_xb_raw = gather(data.backgrounds, val_idx);
  Matrix val_xa_raw = gather(data.analyses, val_idx);

  Vector mean, std;
  standardization_stats(train_xb_raw, train_xa_raw, mean, std);
  Matrix train_xb = normalize_rows(train_xb_raw, mean, std);
  Matrix train_xa = normalize_rows(train_xa_raw, mean, std);
  Matrix val_xb = normalize_rows(val_xb_raw, mean, std);
  Matrix val_xa = normalize_rows(val_xa_raw, mean, std);

  VelocityNet net = make_velocity_net(d, cfg.widths, cfg.d_tau, rng);

  // Frozen validation coupling: fixed z0/tau/assignment so plateau and early
  // stopping see a noise-free signal.
  TrainingBatch val = make_training_batch(val_xb, val_xa, cfg.beta, rng);

  auto validation_loss = [&](const VelocityNet& model) {
    Matrix v = net_forward(model, val.z_tau, val.tau, val.xb);
    return (v - val.vstar).array().square().sum() /
           static_cast<double>(val.xb.rows());
  };

  TrainResult result;
  result.norm_mean = mean;
  result.norm_std = std;
  result.net = net;
  result.best_val_loss = std::numeric_limits<double>::infinity();

  AdamWState adam;
  NetTensors grads = zeros_like(net);
  double lr = cfg.lr;
  int bad_plateau = 0;
  int bad_stop = 0;

  std::vector<int> order(train_idx.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    fisher_yates(order, rng);
    double loss_sum = 0.0;
    for (int start = 0; start < n_train; start += cfg.batch) {
      const int bn = std::min(cfg.batch, n_train - start);
      Matrix bxb(bn, d), bxa(bn, d);
      for (int r = 0; r < bn; ++r) {
        bxb.row(r) = train_xb.row(order[start + r]);
        bxa.row(r) = train_xa.row(order[start + r]);
      }
      TrainingBatch tb = make_training_batch(bxb, bxa, cfg.beta, rng);
      const double loss = net_backward(net, tb.z_tau, tb.tau, tb.xb, tb.vstar, grads);
      if (!std::isfinite(loss)) {
        throw NonFiniteLoss("train: non-finite loss at epoch " +
                            std::to_string(epoch) + ", batch offset " +
                            std::to_string(start));
      }
      loss_sum += loss * bn;
      adamw_step(net, grads, adam, lr, cfg.weight_decay);
    }
    const double train_loss = loss_sum / n_train;
    const double val_loss = validation_loss(net);
    if (!std::isfinite(val_loss)) {
      throw NonFiniteLoss("train: non-finite validation loss at epoch " +
                          std::to_string(epoch));
    }
    result.history.push_back({epoch, train_loss, val_loss, lr});

    if (val_loss < result.best_val_loss) {
      result.best_val_loss = val_loss;
      result.best_epoch = epoch;
      result.net = net;
      bad_plateau = 0;
      bad_stop = 0;
    } else {
      ++bad_plateau;
      ++bad_stop;
    }
    if (bad_plateau > cfg.plateau_patience) {
      lr *= cfg.plateau_factor;
      bad_plateau = 0;
    }
    if (bad_stop > cfg.early_stop_patience) break;
  }
  return result;
}

}  // namespace pnpda
