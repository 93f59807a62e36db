#pragma once

#include <malloc.h>

namespace uraenas {

/// The tape allocates and frees many medium-sized buffers per step; keeping
/// them on the heap instead of mmap avoids page-fault churn. glibc only.
inline void tune_allocator() {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
    mallopt(M_TOP_PAD, 64 << 20);
}

} // namespace uraenas
