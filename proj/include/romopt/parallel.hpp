#pragma once

#include <cstdint>
#include <functional>

namespace romopt {

// Thread-count control for the OpenMP kernels. Resolution order:
// explicit set_thread_cap(), then the ROMOPT_THREADS environment variable,
// then the OpenMP default. A cap of 1 forces the serial paths.
int thread_cap();
void set_thread_cap(int n);

/// Parallel loop over [0, n) with disjoint per-index writes. Results are
/// bit-identical for any thread count; reductions do not belong here.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& body);

/// Serial reference loop with the same contract, kept for testing and
/// benchmarking against parallel_for.
void serial_for(std::int64_t n, const std::function<void(std::int64_t)>& body);

}  // namespace romopt
