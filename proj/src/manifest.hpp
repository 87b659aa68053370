#pragma once

#include <atomic>
#include <cstdint>
#include <string>
#include <thread>

namespace graphfm {

// Current / peak resident set of this process in KiB (Linux /proc).
std::int64_t current_rss_kib();
std::int64_t high_water_rss_kib();

// Samples resident memory on a background thread at a fixed cadence and
// keeps the running maximum; the final peak also folds in the kernel's
// high-water mark so short spikes between samples are not lost.
class RssSampler {
public:
    explicit RssSampler(int interval_ms = 100);
    ~RssSampler();
    void stop();
    double peak_mib() const;

private:
    std::atomic<bool> running_{true};
    std::atomic<std::int64_t> peak_kib_{0};
    std::thread thread_;
};

std::string iso8601_now();

// Build stamp injected by the build system.
const char* build_describe();

}  // namespace graphfm
