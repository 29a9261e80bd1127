#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

namespace ssvi {

/// Samples per reduction chunk. Partial sums are formed per chunk and then
/// combined pairwise in chunk order, so results do not depend on thread count.
inline constexpr std::size_t kReductionChunk = 1024;

void set_thread_count(int n);  // n <= 0 means hardware concurrency
int thread_count();

/// Calls fn(task) for task in [0, tasks) on the worker pool. Each task runs once.
void parallel_for(std::size_t tasks, const std::function<void(std::size_t)>& fn);

inline std::size_t chunk_count(std::size_t n) { return (n + kReductionChunk - 1) / kReductionChunk; }

/// Pairwise (tree) reduction over partials in index order.
template <class T, class Add>
T pairwise_reduce(std::vector<T>& parts, Add add) {
  if (parts.empty()) return T{};
  for (std::size_t width = 1; width < parts.size(); width *= 2)
    for (std::size_t i = 0; i + width < parts.size(); i += 2 * width) add(parts[i], parts[i + width]);
  return parts[0];
}

/// Independent 64-bit stream for (seed, stream) via splitmix64 mixing.
std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t stream);

}  // namespace ssvi
