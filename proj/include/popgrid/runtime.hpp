#pragma once

// Process-level tuning for executables built on the library.

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace popgrid {

// Training allocates and frees many short-lived matrices of a few hundred KB.
// With glibc defaults each one is a fresh mmap or heap trim, and the page faults
// cost as much as the arithmetic. Raising both thresholds keeps the memory.
inline void configure_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
}

}  // namespace popgrid
