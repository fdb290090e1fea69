#include "pivotmt/tensor/allocator.hpp"

#include <cstdlib>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace pivotmt::tensor {

void tune_allocator() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 32 << 20);
    mallopt(M_TOP_PAD, 512 << 20);
    return true;
  }();
  (void)done;
#endif
}

}  // namespace pivotmt::tensor
