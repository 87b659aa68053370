#include "manifest.hpp"

#include <chrono>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <fstream>
#include <string>

namespace graphfm {

namespace {

std::int64_t read_status_field(const char* key) {
    std::ifstream in("/proc/self/status");
    if (!in.good()) return 0;
    std::string line;
    const std::size_t key_len = std::strlen(key);
    while (std::getline(in, line)) {
        if (line.compare(0, key_len, key) == 0) {
            std::int64_t kib = 0;
            std::sscanf(line.c_str() + key_len, "%ld", &kib);
            return kib;
        }
    }
    return 0;
}

}  // namespace

std::int64_t current_rss_kib() { return read_status_field("VmRSS:"); }
std::int64_t high_water_rss_kib() { return read_status_field("VmHWM:"); }

RssSampler::RssSampler(int interval_ms) {
    peak_kib_ = current_rss_kib();
    thread_ = std::thread([this, interval_ms] {
        while (running_.load(std::memory_order_relaxed)) {
            const std::int64_t now = current_rss_kib();
            std::int64_t prev = peak_kib_.load(std::memory_order_relaxed);
            while (now > prev &&
                   !peak_kib_.compare_exchange_weak(prev, now, std::memory_order_relaxed)) {
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(interval_ms));
        }
    });
}

RssSampler::~RssSampler() { stop(); }

void RssSampler::stop() {
    if (thread_.joinable()) {
        running_.store(false);
        thread_.join();
    }
    const std::int64_t hwm = high_water_rss_kib();
    std::int64_t prev = peak_kib_.load();
    while (hwm > prev && !peak_kib_.compare_exchange_weak(prev, hwm)) {
    }
}

double RssSampler::peak_mib() const {
    return static_cast<double>(peak_kib_.load()) / 1024.0;
}

std::string iso8601_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

#ifndef GRAPHFM_GIT_DESCRIBE
#define GRAPHFM_GIT_DESCRIBE "unknown"
#endif

const char* build_describe() { return GRAPHFM_GIT_DESCRIBE; }

}  // namespace graphfm
