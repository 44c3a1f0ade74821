#pragma once

#include <cstdint>
#include <functional>

namespace pdnet {

// Runs fn(begin, end) over a static partition of [0, n). Each range is
// disjoint and processed sequentially inside, so results are bitwise
// independent of the worker count. Calls nested inside a worker run inline.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn);

int worker_count();         // 1 disables the pool
void set_worker_count(int n);

}  // namespace pdnet
