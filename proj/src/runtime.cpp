#include "colearn/runtime.hpp"

#include <cstdlib>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace colearn {

void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_TOP_PAD, 256 << 20);
#endif
}

} // namespace colearn
