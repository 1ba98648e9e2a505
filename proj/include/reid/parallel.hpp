#pragma once

#include <cstddef>

namespace reid {

/// Caps the worker count used by row-parallel loops. 0 restores the runtime
/// default. Results never depend on this value.
void set_thread_count(std::size_t n);
std::size_t thread_count();

}  // namespace reid
