#pragma once

#include <cstddef>
#include <functional>

namespace ct {

// Worker cap: CT_THREADS if set and positive, else hardware concurrency (min 1).
std::size_t worker_count();

// Runs fn(shard, begin, end) over `shards` contiguous slices of [0, n).
// Shard boundaries depend only on (n, shards), so callers that merge
// per-shard results in shard order stay deterministic.
void parallel_shards(std::size_t n, std::size_t shards,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& fn);

}  // namespace ct
