#pragma once

#include <cstdint>
#include <string>

#include "pnpda/dynamics.hpp"
#include "pnpda/flowmatch.hpp"
#include "pnpda/observations.hpp"

namespace pnpda {

// All binary artifacts share one container layout (documented in the README):
// an 8-byte magic "PNPDAB1\n", a little-endian u64 JSON header length, the
// UTF-8 JSON header, a little-endian u64 double count and the raw
// little-endian float64 blob. Round-trips are bit-exact.

struct TrajectoryMeta {
  std::string testbed;
  double dt = 0.0;
  std::uint64_t seed = 0;
};

void save_trajectory(const std::string& path, const Trajectory& traj,
                     const TrajectoryMeta& meta);
Trajectory load_trajectory(const std::string& path,
                           TrajectoryMeta* meta = nullptr);

void save_observations(const std::string& path, const ObservationBatch& batch,
                       const std::string& testbed, std::uint64_t seed);
ObservationBatch load_observations(const std::string& path,
                                   std::string* testbed = nullptr,
                                   std::uint64_t* seed = nullptr);

void save_dataset(const std::string& path, const PairDataset& data);
PairDataset load_dataset(const std::string& path);

// FNV-1a 64-bit fingerprint, hex encoded; used for config hashes in
// manifests.
std::string fnv1a_hex(const std::string& text);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace pnpda
