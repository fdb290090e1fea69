#pragma once

namespace pivotmt::tensor {

// Keeps large tensor buffers on the heap instead of fresh mmap regions, so
// repeated training steps stop paying for page faults. Idempotent; a no-op
// outside glibc.
void tune_allocator();

}  // namespace pivotmt::tensor
