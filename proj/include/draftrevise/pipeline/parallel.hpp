#pragma once

#include <cstddef>
#include <functional>

namespace draftrevise::pipeline {

/// DRAFTREVISE_THREADS when set, hardware concurrency otherwise. Throws
/// ConfigError when the variable is not a positive integer.
std::size_t worker_count();

/// Runs body(i) for i in [0, count) on up to worker_count() threads. Work
/// items must write only to their own slots; the exception of the lowest
/// failing index is rethrown.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace draftrevise::pipeline
