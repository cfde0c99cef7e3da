#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace scnn {

enum class ErrorCode {
  shape_mismatch,
  extent_overflow,
  out_of_bounds,
  bad_config,
  bad_data,
  bad_magic,
  version_unsupported,
  checksum_mismatch,
  truncated_file,
  io_failure,
  label_out_of_range,
  nonfinite_loss,
  spatial_underflow,
  head_not_dense,
  class_too_small,
  missing_tape,
  internal,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

// Counter-based PRNG built on the splitmix64 finalizer. Every draw is a pure
// function of (seed, stream, counter), so streams can be derived for
// (sample, iteration, node) tuples and replayed in any order with identical
// results on any platform. The algorithm is documented in docs/FORMAT.md.
class Prng {
 public:
  explicit Prng(std::uint64_t seed, std::uint64_t stream = 0)
      : seed_(seed), stream_(stream) {}

  static std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  std::uint64_t next_u64() {
    return mix(mix(seed_ ^ mix(stream_)) + counter_++);
  }

  // Uniform in [0,1) with 53 random bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  // Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
};

// Derives a child stream id from structured coordinates.
inline std::uint64_t derive_stream(std::uint64_t a, std::uint64_t b = 0,
                                   std::uint64_t c = 0) {
  return Prng::mix(a ^ Prng::mix(b ^ Prng::mix(c)));
}

int num_threads();
void set_num_threads(int n);

// Runs f(i) for i in [0, n). Work is split into contiguous chunks, one per
// thread; each index is processed exactly once, so any f writing to disjoint
// regions per index yields results independent of the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& f);

}  // namespace scnn
