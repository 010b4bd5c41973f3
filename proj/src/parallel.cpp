#include "romopt/parallel.hpp"

#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace romopt {

namespace {
int g_cap = 0;  // 0 = unset

int env_threads() {
    const char* s = std::getenv("ROMOPT_THREADS");
    if (!s) return 0;
    int n = std::atoi(s);
    return n > 0 ? n : 0;
}
}  // namespace

int thread_cap() {
    if (g_cap > 0) return g_cap;
    int e = env_threads();
    if (e > 0) return e;
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void set_thread_cap(int n) { g_cap = n; }

void serial_for(std::int64_t n, const std::function<void(std::int64_t)>& body) {
    for (std::int64_t i = 0; i < n; ++i) body(i);
}

void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& body) {
#ifdef _OPENMP
    int nt = thread_cap();
    if (nt > 1 && n > 1) {
#pragma omp parallel for schedule(static) num_threads(nt)
        for (std::int64_t i = 0; i < n; ++i) body(i);
        return;
    }
#endif
    serial_for(n, body);
}

}  // namespace romopt
