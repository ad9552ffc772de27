#pragma once

#include <cstddef>
#include <exception>
#include <functional>

namespace avgsim {

/// Global worker cap (the CLI's --threads). 0 means hardware concurrency.
void set_thread_count(std::size_t n);
std::size_t thread_count();

/// Runs fn(i) for i in [0, n). Work is split into contiguous blocks; callers
/// write results into per-index slots and reduce in index order afterwards, so
/// outputs never depend on the worker count. Nested calls run serially. If any
/// fn throws, the exception of the smallest failing index is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace avgsim
