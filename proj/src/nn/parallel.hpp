#pragma once

#include <algorithm>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace derm::nn::detail {

inline int worker_count() {
#ifdef _OPENMP
  return std::max(1, omp_get_max_threads());
#else
  return 1;
#endif
}

// Runs fn(i) for i in [0, n). Iterations must write disjoint memory.
template <typename Fn>
void parallel_for(int n, Fn&& fn) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (n > 1)
  for (int i = 0; i < n; ++i) fn(i);
#else
  for (int i = 0; i < n; ++i) fn(i);
#endif
}

// Static partition of [0, n) into `parts` contiguous ranges.
inline std::pair<int, int> chunk_range(int n, int parts, int part) {
  const int base = n / parts;
  const int extra = n % parts;
  const int begin = part * base + std::min(part, extra);
  return {begin, begin + base + (part < extra ? 1 : 0)};
}

}  // namespace derm::nn::detail
