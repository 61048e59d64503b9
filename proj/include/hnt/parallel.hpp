#pragma once

#include <cstddef>
#include <functional>

namespace hnt {

/// Worker count from HNT_WORKERS (default 1). Never influences results.
std::size_t worker_count();

/// Overrides the environment for the current process; 0 restores it.
void set_worker_count(std::size_t n);

/// Runs fn(0..n-1) across worker_count() threads. Each index must write only
/// its own output slot. The exception of the lowest failing index is
/// rethrown, so errors are as deterministic as results. Nested calls made
/// from inside a worker run serially.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace hnt
