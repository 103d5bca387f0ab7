#include "pnpda/io.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "pnpda/errors.hpp"

namespace pnpda {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'P', 'N', 'P', 'D', 'A', 'B', '1', '\n'};

void write_u64(std::ofstream& out, std::uint64_t v) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

std::uint64_t read_u64(std::ifstream& in) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

void write_container(const std::string& path, const json& header,
                     const std::vector<double>& blob) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(kMagic, 8);
  const std::string h = header.dump();
  write_u64(out, h.size());
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  write_u64(out, blob.size());
  static_assert(sizeof(double) == 8);
  out.write(reinterpret_cast<const char*>(blob.data()),
            static_cast<std::streamsize>(blob.size() * 8));
  if (!out) throw IoError("write failed: " + path);
}

std::pair<json, std::vector<double>> read_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) {
    throw IoError("bad magic in " + path);
  }
  const std::uint64_t hsize = read_u64(in);
  std::string h(hsize, '\0');
  in.read(h.data(), static_cast<std::streamsize>(hsize));
  const std::uint64_t n = read_u64(in);
  std::vector<double> blob(n);
  in.read(reinterpret_cast<char*>(blob.data()),
          static_cast<std::streamsize>(n * 8));
  if (!in) throw IoError("truncated container: " + path);
  json header = json::parse(h);
  return {std::move(header), std::move(blob)};
}

std::vector<double> matrix_blob_row_major(const Matrix& m) {
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) v.push_back(m(i, j));
  }
  return v;
}

json vector_to_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Vector vector_from_json(const json& a) {
  Vector v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  return v;
}

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const json& rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows[0].size();
  Matrix m(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          rows[i][j].get<double>();
    }
  }
  return m;
}

}  // namespace

void save_trajectory(const std::string& path, const Trajectory& traj,
                     const TrajectoryMeta& meta) {
  json header{{"kind", "trajectory"},
              {"format_version", 1},
              {"testbed", meta.testbed},
              {"dt", meta.dt},
              {"seed", meta.seed},
              {"n_states", traj.size()},
              {"dim", traj.dim()}};
  std::vector<double> blob;
  blob.reserve(traj.times.size() + static_cast<std::size_t>(traj.states.size()));
  blob.insert(blob.end(), traj.times.begin(), traj.times.end());
  auto states = matrix_blob_row_major(traj.states);
  blob.insert(blob.end(), states.begin(), states.end());
  write_container(path, header, blob);
}

Trajectory load_trajectory(const std::string& path, TrajectoryMeta* meta) {
  auto [header, blob] = read_container(path);
  if (header.value("kind", "") != "trajectory") {
    throw IoError("not a trajectory file: " + path);
  }
  const int n = header.at("n_states").get<int>();
  const int d = header.at("dim").get<int>();
  if (blob.size() != static_cast<std::size_t>(n) * (1 + d)) {
    throw IoError("trajectory blob size mismatch: " + path);
  }
  Trajectory traj;
  traj.times.assign(blob.begin(), blob.begin() + n);
  traj.states.resize(n, d);
  std::size_t pos = n;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) traj.states(i, j) = blob[pos++];
  }
  if (meta) {
    meta->testbed = header.value("testbed", "");
    meta->dt = header.value("dt", 0.0);
    meta->seed = header.value("seed", std::uint64_t{0});
  }
  return traj;
}

void save_observations(const std::string& path, const ObservationBatch& batch,
                       const std::string& testbed, std::uint64_t seed) {
  json header{{"kind", "observations"},
              {"format_version", 1},
              {"testbed", testbed},
              {"seed", seed},
              {"n_obs", batch.size()},
              {"obs_dim", batch.spec.obs_dim()},
              {"indices", batch.spec.indices},
              {"noise_cov", matrix_to_json(batch.spec.noise_cov.matrix())}};
  std::vector<double> blob;
  blob.insert(blob.end(), batch.times.begin(), batch.times.end());
  auto values = matrix_blob_row_major(batch.values);
  blob.insert(blob.end(), values.begin(), values.end());
  write_container(path, header, blob);
}

ObservationBatch load_observations(const std::string& path,
                                   std::string* testbed, std::uint64_t* seed) {
  auto [header, blob] = read_container(path);
  if (header.value("kind", "") != "observations") {
    throw IoError("not an observations file: " + path);
  }
  const int n = header.at("n_obs").get<int>();
  const int m = header.at("obs_dim").get<int>();
  std::vector<int> indices = header.at("indices").get<std::vector<int>>();
  SpdMatrix cov{matrix_from_json(header.at("noise_cov"))};
  ObservationBatch batch{std::vector<double>(), Matrix(n, m),
                         ObservationSpec(std::move(indices), std::move(cov))};
  if (blob.size() != static_cast<std::size_t>(n) * (1 + m)) {
    throw IoError("observations blob size mismatch: " + path);
  }
  batch.times.assign(blob.begin(), blob.begin() + n);
  std::size_t pos = n;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) batch.values(i, j) = blob[pos++];
  }
  if (testbed) *testbed = header.value("testbed", "");
  if (seed) *seed = header.value("seed", std::uint64_t{0});
  return batch;
}

void save_dataset(const std::string& path, const PairDataset& data) {
  json header{{"kind", "pair_dataset"},
              {"format_version", 1},
              {"testbed", data.testbed},
              {"generator", data.generator},
              {"seed", data.seed},
              {"n_pairs", data.size()},
              {"dim", data.dim()},
              {"stat_mean", vector_to_json(data.stat_mean)},
              {"stat_std", vector_to_json(data.stat_std)}};
  // Blob holds interleaved pairs: xb_0, xa_0, xb_1, xa_1, ...
  std::vector<double> blob;
  blob.reserve(static_cast<std::size_t>(data.size()) * data.dim() * 2);
  for (int i = 0; i < data.size(); ++i) {
    for (int j = 0; j < data.dim(); ++j) blob.push_back(data.backgrounds(i, j));
    for (int j = 0; j < data.dim(); ++j) blob.push_back(data.analyses(i, j));
  }
  write_container(path, header, blob);
}

PairDataset load_dataset(const std::string& path) {
  auto [header, blob] = read_container(path);
  if (header.value("kind", "") != "pair_dataset") {
    throw IoError("not a pair dataset file: " + path);
  }
  PairDataset data;
  const int n = header.at("n_pairs").get<int>();
  const int d = header.at("dim").get<int>();
  if (blob.size() != static_cast<std::size_t>(n) * d * 2) {
    throw IoError("dataset blob size mismatch: " + path);
  }
  data.testbed = header.value("testbed", "");
  data.generator = header.value("generator", "");
  data.seed = header.value("seed", std::uint64_t{0});
  data.stat_mean = vector_from_json(header.at("stat_mean"));
  data.stat_std = vector_from_json(header.at("stat_std"));
  data.backgrounds.resize(n, d);
  data.analyses.resize(n, d);
  std::size_t pos = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) data.backgrounds(i, j) = blob[pos++];
    for (int j = 0; j < d; ++j) data.analyses(i, j) = blob[pos++];
  }
  return data;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  json header{{"kind", "checkpoint"},
              {"format_version", 1},
              {"testbed", ckpt.testbed},
              {"state_dim", ckpt.net.state_dim},
              {"widths", ckpt.net.widths()},
              {"d_tau", ckpt.net.embed.dim()},
              {"norm_mean", vector_to_json(ckpt.norm_mean)},
              {"norm_std", vector_to_json(ckpt.norm_std)},
              {"beta", ckpt.beta},
              {"seed", ckpt.seed}};
  // Parameter blob order: embedding frequencies, then per hidden layer
  // W (row-major), b, ln_scale, ln_shift, then the output projection W
  // (row-major) and bias.
  std::vector<double> blob;
  for (Eigen::Index i = 0; i < ckpt.net.embed.freqs.size(); ++i) {
    blob.push_back(ckpt.net.embed.freqs[i]);
  }
  Vector params = flatten_trainable(ckpt.net);
  blob.insert(blob.end(), params.data(), params.data() + params.size());
  write_container(path, header, blob);
}

Checkpoint load_checkpoint(const std::string& path) {
  auto [header, blob] = read_container(path);
  if (header.value("kind", "") != "checkpoint") {
    throw IoError("not a checkpoint file: " + path);
  }
  Checkpoint ckpt;
  ckpt.testbed = header.value("testbed", "");
  ckpt.beta = header.value("beta", 0.0);
  ckpt.seed = header.value("seed", std::uint64_t{0});
  ckpt.norm_mean = vector_from_json(header.at("norm_mean"));
  ckpt.norm_std = vector_from_json(header.at("norm_std"));

  const int state_dim = header.at("state_dim").get<int>();
  const std::vector<int> widths = header.at("widths").get<std::vector<int>>();
  const int d_tau = header.at("d_tau").get<int>();

  // Rebuild the architecture, then overwrite every parameter from the blob.
  RngStream scratch_rng(0, 0);
  ckpt.net = make_velocity_net(state_dim, widths, d_tau, scratch_rng);
  const Eigen::Index n_embed = d_tau / 2;
  const Eigen::Index n_params = ckpt.net.trainable_parameter_count();
  if (blob.size() != static_cast<std::size_t>(n_embed + n_params)) {
    throw IoError("checkpoint blob size mismatch: " + path);
  }
  for (Eigen::Index i = 0; i < n_embed; ++i) ckpt.net.embed.freqs[i] = blob[i];
  Vector params(n_params);
  for (Eigen::Index i = 0; i < n_params; ++i) params[i] = blob[n_embed + i];
  set_trainable(ckpt.net, params);
  return ckpt;
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return text;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace pnpda
