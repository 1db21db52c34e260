#pragma once

#include <functional>

namespace hpm {

// Runs fn(i) for i in [0, n) on up to `workers` threads. Exceptions are
// rethrown on the caller's thread (the lowest failing index wins).
void parallel_for(int n, int workers, const std::function<void(int)>& fn);

int default_workers();

}  // namespace hpm
