#pragma once

#include <cstddef>
#include <functional>

namespace avdit {

/// Worker cap: ADT_THREADS if set to a positive integer, else the hardware
/// concurrency. Never less than 1.
std::size_t worker_threads();

/// Runs fn(i) for i in [0, n) on up to worker_threads() threads. Items must
/// not share mutable state; the first exception thrown is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace avdit
