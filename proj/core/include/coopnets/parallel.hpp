#pragma once

#include <cstddef>
#include <functional>

namespace coopnets {

/// Process-wide worker cap used by batch operations. 1 runs everything inline.
void set_thread_count(std::size_t count);
std::size_t thread_count() noexcept;

/// Calls body(i) for every i in [0, count). Work items must not share mutable
/// state; reductions happen afterwards, in index order, on the caller's side.
/// The exception thrown by the lowest failing index is rethrown.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace coopnets
