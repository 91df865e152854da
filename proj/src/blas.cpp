#include "fpt/blas.hpp"

#include <cblas.h>
#include <cstdlib>

extern "C" char* openblas_get_corename(void);

namespace {

// OpenBLAS reads OPENBLAS_CORETYPE in its own constructor. The sandbox CPU
// reports a generic model string, which makes the dynamic dispatcher fall
// back to the Prescott (SSE3) kernels — ~6x slower than the AVX-512 ones this
// core actually supports. Priority 101 runs before OpenBLAS's default-priority
// init as long as the library is linked statically. Pinning the kernel and
// the thread count also keeps sgemm bitwise deterministic run-to-run.
__attribute__((constructor(101))) void pin_openblas_env() {
  __builtin_cpu_init();  // __cpu_indicator_init hasn't run yet at this priority
  if (!getenv("OPENBLAS_CORETYPE")) {
    if (__builtin_cpu_supports("avx512f"))
      setenv("OPENBLAS_CORETYPE", "SKYLAKEX", 1);
    else if (__builtin_cpu_supports("avx2"))
      setenv("OPENBLAS_CORETYPE", "HASWELL", 1);
  }
  setenv("OPENBLAS_NUM_THREADS", "1", 0);
}

}  // namespace

namespace fpt {

void sgemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k,
           float alpha, const float* a, int64_t lda, const float* b, int64_t ldb,
           float beta, float* c, int64_t ldc) {
  // Deferred until after OpenBLAS's own constructor: calling it from a static
  // initializer makes 0.3.20 spawn a thread server before its memory system
  // is up, which later segfaults while idle-spinning.
  static const bool pinned = [] {
    openblas_set_num_threads(1);
    return true;
  }();
  (void)pinned;
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m),
              static_cast<int>(n), static_cast<int>(k), alpha, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), beta, c,
              static_cast<int>(ldc));
}

const char* blas_core_name() { return openblas_get_corename(); }

}  // namespace fpt
