#pragma once

#include <cstddef>
#include <functional>

namespace afformer {

// Worker count: AFFORMER_THREADS if set to a positive integer, otherwise the
// hardware concurrency. set_thread_count overrides both (0 restores the
// environment-derived default).
std::size_t thread_count();
void set_thread_count(std::size_t n);

// Runs body(i) for i in [0, n). Work is split into contiguous static chunks.
// Callers must only write to outputs owned by index i, which keeps results
// independent of the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace afformer
