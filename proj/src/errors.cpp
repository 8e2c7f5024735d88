#include "mmp/errors.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

#include <omp.h>

namespace mmp {

namespace {
std::atomic<bool> g_quiet{false};
std::mutex g_log_mutex;
} // namespace

void log_info(std::string_view message)
{
    if (g_quiet.load()) return;
    std::lock_guard lock(g_log_mutex);
    std::cerr << "[mmp] " << message << '\n';
}

void log_warning(std::string_view message)
{
    if (g_quiet.load()) return;
    std::lock_guard lock(g_log_mutex);
    std::cerr << "[mmp] warning: " << message << '\n';
}

void set_log_quiet(bool quiet) { g_quiet.store(quiet); }

void set_thread_limit(int threads)
{
    if (threads > 0) omp_set_num_threads(threads);
}

int thread_limit() { return omp_get_max_threads(); }

} // namespace mmp
