#pragma once

#include <cstddef>
#include <functional>

namespace afm::util {

// Worker cap: AFM_THREADS when set and positive, else hardware concurrency.
std::size_t worker_count();

// Runs fn(i) for i in [0, n) on up to worker_count() threads. Work items
// must be independent; results are identical for any thread count. The
// first exception thrown by any item is rethrown after all workers stop.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace afm::util
