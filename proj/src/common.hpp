#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace graphfm {

// Error categories shared by the C++ core and mirrored 1:1 by the C API
// status codes. Keep in sync with gfm_status in include/graphfm/graphfm.h.
enum class Status : int {
    ok = 0,
    invalid_argument = 1,
    io_error = 2,
    parse_error = 3,
    bounds_error = 4,
    shape_error = 5,
    numeric_error = 6,
    config_error = 7,
    state_error = 8,
    provider_error = 9,
    format_error = 10,
    unsupported = 11,
    internal_error = 12,
};

const char* status_name(Status s);

class Error : public std::runtime_error {
public:
    Error(Status status, const std::string& message)
        : std::runtime_error(message), status_(status) {}
    Status status() const { return status_; }

private:
    Status status_;
};

[[noreturn]] inline void fail(Status status, const std::string& message) {
    throw Error(status, message);
}

inline void require(bool condition, Status status, const std::string& message) {
    if (!condition) fail(status, message);
}

using NodeId = std::uint32_t;

}  // namespace graphfm
