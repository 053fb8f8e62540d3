#pragma once

#include <cstddef>
#include <functional>

namespace kpx {

/// Number of worker threads: KPX_THREADS if set, else hardware concurrency.
unsigned worker_count();

/// Runs fn(i) for i in [0, n) on up to worker_count() threads with a static
/// contiguous partition. Exceptions from workers are rethrown on the caller.
/// Callers are responsible for making per-index work independent; when results
/// are written to per-index slots the outcome does not depend on the number of
/// threads.
void parallel_for_index(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace kpx
