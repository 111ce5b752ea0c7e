#include "caplab/kernels.hpp"

#include <algorithm>
#include <cstdlib>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace caplab::kernels {

namespace {

int resolve_default_threads() {
#ifdef _OPENMP
    int n = omp_get_max_threads();
#else
    int n = 1;
#endif
    if (const char* env = std::getenv("CAPLAB_THREADS")) {
        const int cap = std::atoi(env);
        if (cap > 0) n = std::min(n, cap);
    }
    return std::max(1, n);
}

int g_threads = resolve_default_threads();

}  // namespace

int threads() { return g_threads; }

void set_threads(int n) { g_threads = std::max(1, n); }

}  // namespace caplab::kernels
