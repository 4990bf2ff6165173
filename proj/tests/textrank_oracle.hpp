#pragma once

// Plain power iteration for TextRank scores on an undirected graph
// (test-only): s <- (1 - d) + d * sum over neighbours u of s_u / deg(u).

#include <cmath>
#include <utility>
#include <vector>

namespace xlsum::testing {

inline std::vector<double> power_iteration_scores(const std::vector<std::pair<int, int>>& edges, std::size_t n,
                                                  double d, int iterations = 10000) {
  std::vector<std::vector<std::size_t>> nbrs(n);
  for (auto [a, b] : edges) {
    nbrs[static_cast<std::size_t>(a)].push_back(static_cast<std::size_t>(b));
    nbrs[static_cast<std::size_t>(b)].push_back(static_cast<std::size_t>(a));
  }
  std::vector<double> s(n, 1.0), next(n);
  for (int it = 0; it < iterations; ++it) {
    for (std::size_t v = 0; v < n; ++v) {
      double acc = 0.0;
      for (auto u : nbrs[v]) acc += s[u] / static_cast<double>(nbrs[u].size());
      next[v] = (1.0 - d) + d * acc;
    }
    s.swap(next);
  }
  return s;
}

}  // namespace xlsum::testing
