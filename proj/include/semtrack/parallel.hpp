#pragma once

#include <functional>

namespace semtrack {

// Worker count: SEMTRACK_THREADS env var if set (min 1), else hardware
// concurrency. Read once per process.
int worker_count();

// Static block partition of [0,n) over the workers. Deterministic: the
// mapping from index to work is fixed and all writes must go to
// index-owned slots. Runs serially when n is small, when only one worker
// is configured, or when called from inside another parallel_for.
void parallel_for(int n, const std::function<void(int)>& fn);

// Same, but hands each worker a contiguous [begin,end) range.
void parallel_for_ranges(int n, const std::function<void(int, int)>& fn);

}  // namespace semtrack
