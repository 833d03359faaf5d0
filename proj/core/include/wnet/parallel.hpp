#pragma once

#include <cstdint>
#include <functional>

namespace wnet {

/// Thread cap from the WNET_THREADS environment variable.
/// 0 or 1 means serial; unset falls back to the hardware count.
int max_threads();

/// Runs body(i) for i in [0, n). Work is partitioned into contiguous
/// index blocks, one per worker; every index is computed by exactly one
/// worker with no shared accumulation, so results are bit-identical for
/// any thread count. body must write only to locations owned by index i.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& body);

/// Block variant: body(begin, end) over a partition of [0, n).
void parallel_for_blocked(std::int64_t n,
                          const std::function<void(std::int64_t, std::int64_t)>& body);

}  // namespace wnet
