#pragma once

// Brute-force retrieval oracle shared by the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "ugg/evalkit.hpp"

namespace ugg::testing {

struct OracleResult {
  std::vector<double> ap;
  std::vector<std::size_t> first_hit;  // 1-based rank of the first relevant item
  std::size_t invalid = 0;
};

// O(Q * G^2): each gallery item's rank is the count of items ahead of it
// (strictly closer, or equally close with a smaller index).
inline OracleResult brute_force(const evalkit::RetrievalResult& r) {
  OracleResult out;
  const std::size_t ng = r.distances.cols();
  for (std::size_t q = 0; q < r.distances.rows(); ++q) {
    auto kept = [&](std::size_t j) { return r.query_ids.empty() || r.gallery_ids[j] != r.query_ids[q]; };
    std::vector<std::size_t> rank(ng, 0);
    for (std::size_t j = 0; j < ng; ++j) {
      if (!kept(j)) continue;
      std::size_t ahead = 0;
      for (std::size_t k = 0; k < ng; ++k) {
        if (k == j || !kept(k)) continue;
        const double dk = r.distances(q, k), dj = r.distances(q, j);
        if (dk < dj || (dk == dj && k < j)) ++ahead;
      }
      rank[j] = ahead + 1;
    }
    std::vector<std::size_t> relevant;
    for (std::size_t j = 0; j < ng; ++j)
      if (kept(j) && r.gallery_labels[j] == r.query_labels[q]) relevant.push_back(rank[j]);
    if (relevant.empty()) {
      ++out.invalid;
      continue;
    }
    double ap = 0.0;
    std::size_t first = ng + 1;
    for (std::size_t ri : relevant) {
      std::size_t within = 0;
      for (std::size_t rk : relevant) within += rk <= ri;
      ap += static_cast<double>(within) / static_cast<double>(ri);
      first = std::min(first, ri);
    }
    out.ap.push_back(ap / static_cast<double>(relevant.size()));
    out.first_hit.push_back(first);
  }
  return out;
}

inline evalkit::RetrievalResult random_instance(std::mt19937_64& gen) {
  evalkit::RetrievalResult r;
  const std::size_t nq = 1 + gen() % 10;
  const std::size_t ng = 1 + gen() % 50;
  const std::uint32_t labels = 1 + static_cast<std::uint32_t>(gen() % 8);
  r.distances = Matrix(nq, ng);
  // Coarse quantization forces distance ties.
  const bool coarse = gen() % 2;
  std::uniform_real_distribution<double> u(0.0, 4.0);
  for (double& d : r.distances.values()) d = coarse ? std::floor(u(gen) * 2.0) / 2.0 : u(gen);
  for (std::size_t q = 0; q < nq; ++q) {
    r.query_labels.push_back(static_cast<std::uint32_t>(gen() % labels));
    r.query_ids.push_back(static_cast<std::uint32_t>(1000 + q));
  }
  for (std::size_t j = 0; j < ng; ++j) {
    r.gallery_labels.push_back(static_cast<std::uint32_t>(gen() % labels));
    // Occasionally reuse a query's sample id so it must be excluded.
    r.gallery_ids.push_back(gen() % 10 == 0 ? static_cast<std::uint32_t>(1000 + gen() % nq)
                                            : static_cast<std::uint32_t>(j));
  }
  return r;
}

}  // namespace ugg::testing
