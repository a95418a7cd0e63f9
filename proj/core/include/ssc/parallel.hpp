#pragma once

namespace ssc {

/// Worker count used by the OpenMP kernels. Defaults to $SSC_THREADS when
/// set, otherwise 1.
int num_threads();
void set_num_threads(int n);

/// Restores the previous worker count on destruction.
class ScopedThreads {
 public:
  explicit ScopedThreads(int n) : previous_(num_threads()) { set_num_threads(n); }
  ~ScopedThreads() { set_num_threads(previous_); }
  ScopedThreads(const ScopedThreads&) = delete;
  ScopedThreads& operator=(const ScopedThreads&) = delete;

 private:
  int previous_;
};

}  // namespace ssc
