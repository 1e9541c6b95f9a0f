#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

namespace piie {

// Worker count from PIIE_THREADS, else the hardware concurrency (at least 1).
unsigned default_threads();

// Runs body(i) for i in [0, count) on up to `threads` workers. Work items are
// claimed dynamically; callers write results into per-index slots so output
// never depends on scheduling. The first exception thrown is rethrown.
void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& body);

// SplitMix64 finalizer applied to (master, index): the per-replicate seed rule
// shared by the bootstrap and the simulation harness.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

}  // namespace piie
