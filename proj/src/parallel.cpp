#include "reid/parallel.hpp"

#include <omp.h>

namespace reid {

namespace {
int g_default_threads = -1;
}

void set_thread_count(std::size_t n) {
  if (g_default_threads < 0) g_default_threads = omp_get_max_threads();
  omp_set_num_threads(n == 0 ? g_default_threads : static_cast<int>(n));
}

std::size_t thread_count() { return static_cast<std::size_t>(omp_get_max_threads()); }

}  // namespace reid
