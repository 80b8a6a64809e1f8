#ifndef COLEARN_RUNTIME_HPP
#define COLEARN_RUNTIME_HPP

namespace colearn {

/// Keeps freed autograd buffers inside the process (glibc only). Without it
/// every step maps and faults in fresh pages for its large temporaries.
void tune_allocator();

} // namespace colearn

#endif // COLEARN_RUNTIME_HPP
