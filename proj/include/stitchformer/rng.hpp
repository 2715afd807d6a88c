#pragma once

#include <cstdint>

namespace stitchformer {

// splitmix64 finalizer; the usual constants.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Counter-based random stream: each value is a stateless hash of
// (seed, stream, counter), so a stream can be re-created at any point of a
// run and replays identically. Used for dropout masks and anywhere else a
// reproducible per-call stream is needed.
class RngStream {
  public:
    RngStream() = default;
    RngStream(std::uint64_t seed, std::uint64_t stream) { reset(seed, stream); }

    void reset(std::uint64_t seed, std::uint64_t stream) {
        key_ = mix64(seed ^ mix64(stream));
        counter_ = 0;
    }

    std::uint64_t next_u64() { return mix64(key_ + counter_++); }

    // Uniform in [0, 1) with 53 bits of mantissa.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    std::uint64_t counter() const { return counter_; }

  private:
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

}  // namespace stitchformer
