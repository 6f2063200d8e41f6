#include "hgformer/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace hgf {
namespace {

std::size_t workers_from_env() {
  const char* env = std::getenv("HGF_THREADS");
  if (env == nullptr) return 1;
  try {
    const long v = std::stol(env);
    return v > 0 ? static_cast<std::size_t>(v) : 1;
  } catch (...) {
    return 1;
  }
}

std::atomic<std::size_t>& workers() {
  static std::atomic<std::size_t> n{workers_from_env()};
  return n;
}

// Below this many indices the thread start-up cost dominates.
constexpr std::size_t kMinChunk = 64;

}  // namespace

std::size_t worker_count() { return workers().load(std::memory_order_relaxed); }

void set_worker_count(std::size_t n) { workers().store(std::max<std::size_t>(1, n)); }

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
  const std::size_t w = std::min(worker_count(), std::max<std::size_t>(1, n / kMinChunk));
  if (w <= 1) {
    if (n > 0) fn(0, n);
    return;
  }
  const std::size_t chunk = (n + w - 1) / w;
  std::vector<std::thread> pool;
  pool.reserve(w - 1);
  for (std::size_t t = 1; t < w; ++t) {
    const std::size_t b = t * chunk;
    const std::size_t e = std::min(n, b + chunk);
    if (b < e) pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  fn(0, std::min(n, chunk));
  for (auto& th : pool) th.join();
}

}  // namespace hgf
