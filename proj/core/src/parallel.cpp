#include "ssc/parallel.hpp"

#include <omp.h>

#include <cstdlib>
#include <string>

namespace ssc {
namespace {

int initial_threads() {
  if (const char* env = std::getenv("SSC_THREADS")) {
    try {
      int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (...) {
    }
  }
  return 1;
}

int& thread_setting() {
  static int n = [] {
    int v = initial_threads();
    omp_set_num_threads(v);
    return v;
  }();
  return n;
}

}  // namespace

int num_threads() { return thread_setting(); }

void set_num_threads(int n) {
  if (n < 1) n = 1;
  thread_setting() = n;
  omp_set_num_threads(n);
}

}  // namespace ssc
