#include "vismem/parallel.hpp"

#include <omp.h>

#include <cstdlib>
#include <string>

#include "vismem/error.hpp"

namespace vismem {

namespace {

int initial_threads() {
  if (const char* env = std::getenv("VISMEM_THREADS"); env && *env) {
    try {
      const int n = std::stoi(env);
      if (n > 0) return n;
    } catch (const std::exception&) {
    }
  }
  return omp_get_max_threads();
}

int& thread_setting() {
  static int threads = initial_threads();
  return threads;
}

}  // namespace

void set_num_threads(int threads) {
  if (threads < 1) throw Error(Errc::usage, "thread count must be >= 1");
  thread_setting() = threads;
}

int num_threads() { return thread_setting(); }

}  // namespace vismem
