#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace atlas {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
[[noreturn]] inline void fail(const char* expr, const std::string& msg) {
  std::ostringstream os;
  os << msg << " (violated: " << expr << ")";
  throw Error(os.str());
}
}  // namespace detail

#define ATLAS_REQUIRE(cond, msg)                        \
  do {                                                  \
    if (!(cond)) {                                      \
      std::ostringstream os_;                           \
      os_ << msg;                                       \
      ::atlas::detail::fail(#cond, os_.str());          \
    }                                                   \
  } while (0)

/// Worker-thread cap: ATLAS_LAB_THREADS if set, else hardware concurrency.
inline int max_threads() {
  static const int n = [] {
    if (const char* s = std::getenv("ATLAS_LAB_THREADS")) {
      int v = std::atoi(s);
      if (v > 0) return v;
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc ? static_cast<int>(hc) : 1;
  }();
  return n;
}

/// Runs fn(begin, end) over [0, n) in chunks of `grain`.
///
/// The chunk grid depends only on (n, grain), never on the worker count, and
/// every chunk is executed by exactly one thread, so any computation whose
/// chunks write disjoint outputs is bitwise reproducible under any thread
/// count.
inline void parallel_for(int64_t n, int64_t grain,
                         const std::function<void(int64_t, int64_t)>& fn) {
  if (n <= 0) return;
  if (grain <= 0) grain = 1;
  const int64_t n_chunks = (n + grain - 1) / grain;
  const int workers = static_cast<int>(
      std::min<int64_t>(max_threads(), n_chunks));
  if (workers <= 1) {
    for (int64_t c = 0; c < n_chunks; ++c)
      fn(c * grain, std::min(n, (c + 1) * grain));
    return;
  }
  std::atomic<int64_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::exception_ptr err;
  std::mutex err_mu;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const int64_t c = next.fetch_add(1);
        if (c >= n_chunks) return;
        try {
          fn(c * grain, std::min(n, (c + 1) * grain));
        } catch (...) {
          std::lock_guard<std::mutex> lk(err_mu);
          if (!err) err = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

constexpr double kPi = 3.14159265358979323846;
constexpr double kTwoPi = 2.0 * kPi;

inline double deg2rad(double d) { return d * kPi / 180.0; }

}  // namespace atlas
