#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace hpnp {

enum class ExecutionMode { sequential, parallel };

/// Thread budget: HPNP_THREADS if set and positive, else the OpenMP default.
inline int thread_budget()
{
    if (const char* env = std::getenv("HPNP_THREADS")) {
        try {
            const int n = std::stoi(env);
            if (n > 0)
                return n;
        } catch (...) {
        }
    }
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

/// Runs body(i) for i in [0, count). Iterations must be independent.
template <typename Body>
void parallel_for(std::size_t count, ExecutionMode mode, Body&& body)
{
#ifdef _OPENMP
    const int threads = mode == ExecutionMode::parallel
        ? std::max(1, std::min<int>(thread_budget(), static_cast<int>(count)))
        : 1;
    if (threads > 1) {
        const auto n = static_cast<long long>(count);
#pragma omp parallel for schedule(dynamic, 4) num_threads(threads)
        for (long long i = 0; i < n; ++i)
            body(static_cast<std::size_t>(i));
        return;
    }
#else
    (void)mode;
#endif
    for (std::size_t i = 0; i < count; ++i)
        body(i);
}

} // namespace hpnp
