#pragma once

#include <array>
#include <cstdint>

#include "ugg/numerics/matrix.hpp"

namespace ugg {

// Philox4x32-10 block function (Salmon et al., counter-based).
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key) noexcept;

// Counter-based random stream. The draw sequence is a pure function of
// (seed, stream id): the seed is the Philox key, the stream id occupies the
// upper half of the counter and the lower half counts blocks. No floating
// point library randomness is used, so sequences are reproducible across
// processes and platforms (up to libm's log/cos in normal()).
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id) noexcept
      : seed_(seed), stream_(stream_id) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint32_t next_u32() noexcept;
  std::uint64_t next_u64() noexcept;
  // Uniform in the open interval (0, 1).
  double uniform() noexcept;
  // Uniform integer in [0, bound). `bound` must be positive.
  std::uint64_t below(std::uint64_t bound) noexcept;
  double normal() noexcept;
  Matrix normal_matrix(std::size_t rows, std::size_t cols);

 private:
  void refill() noexcept;

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> block_{};
  int used_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

RngStream seeded_rng(std::uint64_t seed, std::uint64_t stream_id) noexcept;

// Derive a child stream id from a parent id and a label; used to split a
// root seed into named streams (data, init, reparam, sampler, ...).
std::uint64_t derive_stream(std::uint64_t parent, std::uint64_t label) noexcept;
std::uint64_t derive_stream(std::uint64_t parent, const char* label) noexcept;

}  // namespace ugg
