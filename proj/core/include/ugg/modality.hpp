#pragma once

#include <array>
#include <cstddef>
#include <string_view>

namespace ugg {

enum class Modality : std::size_t { R = 0, N = 1, T = 2 };

inline constexpr std::size_t kModalityCount = 3;
inline constexpr std::array<Modality, kModalityCount> kModalities = {Modality::R, Modality::N,
                                                                     Modality::T};

constexpr std::size_t index_of(Modality m) noexcept { return static_cast<std::size_t>(m); }

constexpr std::string_view name_of(Modality m) noexcept {
  switch (m) {
    case Modality::R: return "R";
    case Modality::N: return "N";
    case Modality::T: return "T";
  }
  return "?";
}

// Train mode samples with reparameterization noise; eval mode is deterministic.
enum class Mode { Train, Eval };

}  // namespace ugg
