#include "pnpda/rng.hpp"

#include <cmath>

namespace pnpda {

namespace {

// Philox4x64 round constants (multipliers and Weyl key increments).
constexpr std::uint64_t kMult0 = 0xD2E7470EE14C6C93ULL;
constexpr std::uint64_t kMult1 = 0xCA5A826395121157ULL;
constexpr std::uint64_t kWeyl0 = 0x9E3779B97F4A7C15ULL;
constexpr std::uint64_t kWeyl1 = 0xBB67AE8584CAA73BULL;

inline void mulhilo(std::uint64_t a, std::uint64_t b, std::uint64_t& hi,
                    std::uint64_t& lo) {
  unsigned __int128 p = static_cast<unsigned __int128>(a) * b;
  hi = static_cast<std::uint64_t>(p >> 64);
  lo = static_cast<std::uint64_t>(p);
}

void philox4x64_10(std::uint64_t k0, std::uint64_t k1, std::uint64_t c0,
                   std::uint64_t c1, std::uint64_t out[4]) {
  std::uint64_t v0 = c0, v1 = c1, v2 = 0, v3 = 0;
  for (int round = 0; round < 10; ++round) {
    std::uint64_t hi0, lo0, hi1, lo1;
    mulhilo(kMult0, v0, hi0, lo0);
    mulhilo(kMult1, v2, hi1, lo1);
    std::uint64_t n0 = hi1 ^ v1 ^ k0;
    std::uint64_t n1 = lo1;
    std::uint64_t n2 = hi0 ^ v3 ^ k1;
    std::uint64_t n3 = lo0;
    v0 = n0;
    v1 = n1;
    v2 = n2;
    v3 = n3;
    k0 += kWeyl0;
    k1 += kWeyl1;
  }
  out[0] = v0;
  out[1] = v1;
  out[2] = v2;
  out[3] = v3;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed),
      stream_id_(stream_id),
      counter_(0),
      buf_pos_(4),
      cached_normal_(0.0),
      has_cached_normal_(false) {}

void RngStream::refill() {
  philox4x64_10(seed_, stream_id_, counter_, 0, buf_);
  ++counter_;
  buf_pos_ = 0;
}

std::uint64_t RngStream::next_u64() {
  if (buf_pos_ >= 4) refill();
  return buf_[buf_pos_++];
}

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::normal() {
  if (has_cached_normal_) {
    has_cached_normal_ = false;
    return cached_normal_;
  }
  // 1 - uniform() lies in (0, 1], keeping the log finite.
  double u1 = 1.0 - uniform();
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double angle = 2.0 * M_PI * u2;
  cached_normal_ = r * std::sin(angle);
  has_cached_normal_ = true;
  return r * std::cos(angle);
}

RngStream RngStream::child(std::uint64_t index) const {
  // Children get a key derived by mixing the parent stream id with the child
  // index; distinct keys give non-overlapping Philox streams.
  std::uint64_t mixed = splitmix64(stream_id_ ^ splitmix64(index + 1));
  return RngStream(seed_, mixed);
}

}  // namespace pnpda
