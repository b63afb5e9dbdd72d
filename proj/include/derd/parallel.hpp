// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace derd {

/// Worker count from DERD_NUM_WORKERS, falling back to hardware concurrency.
std::size_t default_workers();

/// Runs fn(begin, end, worker) over contiguous chunks of [0, n). Chunk
/// boundaries depend only on n and workers, so callers that write results
/// per index get identical output for any worker count.
void parallel_for(std::size_t n, std::size_t workers,
                  const std::function<void(std::size_t, std::size_t, std::size_t)>& fn);

}  // namespace derd
