#pragma once

#include <cstddef>
#include <functional>

namespace hgf {

/// Number of worker threads used by row-parallel kernels. Defaults to the
/// HGF_THREADS environment variable, or 1 when unset.
std::size_t worker_count();
void set_worker_count(std::size_t n);

/// Runs fn(begin, end) over contiguous chunks of [0, n). Every index is
/// visited by exactly one call, so kernels whose outputs are per-index are
/// bitwise identical for any worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace hgf
