#pragma once

#include <cstddef>
#include <exception>
#include <mutex>

namespace mmp::detail {

// Static-schedule OpenMP loop over [0, n). Each index is processed by exactly
// one thread, so results written per index do not depend on the thread count.
// The exception from the lowest failing index is rethrown after the loop.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn)
{
    std::exception_ptr error;
    std::size_t error_index = n;
    std::mutex mutex;
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        try {
            fn(static_cast<std::size_t>(i));
        } catch (...) {
            std::lock_guard lock(mutex);
            if (static_cast<std::size_t>(i) < error_index) {
                error_index = static_cast<std::size_t>(i);
                error = std::current_exception();
            }
        }
    }
    if (error) std::rethrow_exception(error);
}

} // namespace mmp::detail
