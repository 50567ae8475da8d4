// Training/planning allocate and free multi-MB activation buffers every step.
// glibc's default 128KB mmap threshold turns each into mmap + page-fault +
// munmap; pinning large chunks to the arena roughly halves step time.
#include <malloc.h>

namespace strata {
namespace {
struct MallocTuning {
  MallocTuning() {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
  }
} tuning_applied;
}  // namespace
}  // namespace strata
