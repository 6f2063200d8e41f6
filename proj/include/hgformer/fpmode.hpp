#pragma once

// Scoped flush-to-zero / denormals-are-zero for the calling thread.
//
// Random features span hundreds of orders of magnitude, and products of
// tiny features fall into the subnormal range where x86 arithmetic slows
// down by two orders of magnitude. Subnormals are below 2.3e-308, far under
// anything that can change a result, so they are flushed while a model pass
// runs. The previous mode is restored on scope exit.

#if defined(__SSE2__) || defined(_M_X64)
#include <xmmintrin.h>
#define HGF_HAVE_MXCSR 1
#endif

namespace hgf {

class FlushDenormals {
 public:
#ifdef HGF_HAVE_MXCSR
  FlushDenormals() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | kFtz | kDaz); }
  ~FlushDenormals() { _mm_setcsr(saved_); }
#else
  FlushDenormals() = default;
#endif
  FlushDenormals(const FlushDenormals&) = delete;
  FlushDenormals& operator=(const FlushDenormals&) = delete;

 private:
#ifdef HGF_HAVE_MXCSR
  static constexpr unsigned kFtz = 0x8000;
  static constexpr unsigned kDaz = 0x0040;
  unsigned saved_;
#endif
};

}  // namespace hgf
