#pragma once

#include <cstddef>
#include <functional>

namespace voxdiff {

/// Caps library-internal parallelism. 1 (the default) runs everything on the
/// calling thread and is bitwise deterministic.
void set_num_threads(int n);
int num_threads() noexcept;

/// Runs fn(i) for i in [0, n). Work is split in contiguous chunks; callers
/// must not depend on execution order.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace voxdiff
