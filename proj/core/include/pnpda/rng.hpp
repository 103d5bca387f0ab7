#pragma once

#include <cstdint>

namespace pnpda {

// Counter-based pseudo-random stream (Philox4x64-10). The (seed, stream_id)
// pair is the cipher key, so streams with distinct ids are independent by
// construction and never overlap; the counter gives 2^66 draws per stream.
// Integer output is bit-identical across platforms. Value semantics: copying
// a stream copies its position.
class RngStream {
 public:
  RngStream() : RngStream(0, 0) {}
  RngStream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t next_u64();

  // Uniform on [0, 1), 53-bit resolution.
  double uniform();

  // Standard normal via Box-Muller; second value of each pair is cached.
  double normal();

  // Derive a deterministic sub-stream. Used to split one stream into
  // independent parts (observation noise vs. method noise, ensemble members).
  RngStream child(std::uint64_t index) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }

 private:
  void refill();

  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t counter_;
  std::uint64_t buf_[4];
  int buf_pos_;
  double cached_normal_;
  bool has_cached_normal_;
};

inline RngStream seeded_rng(std::uint64_t seed, std::uint64_t stream_id) {
  return RngStream(seed, stream_id);
}

}  // namespace pnpda
