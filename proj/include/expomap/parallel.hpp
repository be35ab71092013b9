#pragma once

#include <cstddef>
#include <functional>

namespace expomap {

// Resolves a thread count: an explicit request wins, then EXPOMAP_THREADS,
// then hardware concurrency. 0 always means "auto".
std::size_t resolve_threads(std::size_t requested);

// Runs fn(i) for i in [0, n). Task i goes to worker i % threads, so the
// assignment does not depend on timing.
void parallel_for(std::size_t n, std::size_t threads,
                  const std::function<void(std::size_t)>& fn);

}  // namespace expomap
