#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mmp {

// Invalid parameters or configuration values.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Missing, unreadable or malformed input data.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-finite objective or similar failure inside a numerical routine.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Human-readable diagnostics go to standard error. Tests silence them.
void log_info(std::string_view message);
void log_warning(std::string_view message);
void set_log_quiet(bool quiet);

// Caps the number of OpenMP threads used by every module (0 = runtime default).
void set_thread_limit(int threads);
int thread_limit();

} // namespace mmp
