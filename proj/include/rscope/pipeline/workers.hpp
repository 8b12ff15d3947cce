#pragma once

#include <cstddef>
#include <functional>

namespace rscope::pipeline {

// Runs fn(0..n-1) on at most `workers` threads. Items write into their own
// result slots, so the outcome does not depend on scheduling. If several
// items throw, the exception of the lowest index is rethrown.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

}  // namespace rscope::pipeline
