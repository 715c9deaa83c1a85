#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vendor_json.hpp"

namespace cortex {

class EmptySamples : public std::invalid_argument {
public:
    EmptySamples() : std::invalid_argument("EmptySamples: percentile of an empty sample set") {}
};

/// Nearest-rank percentile: the ceil(q/100 * n)-th smallest value (1-based).
double percentile(std::span<const double> samples, double q);

struct PoolMetrics {
    std::string name;
    std::size_t dispatches = 0;
    double mean_queue_delay = 0.0;
    std::size_t max_queue_len = 0;
    std::size_t final_queue_len = 0;
    int scale_outs = 0;
    int scale_ins = 0;
    int borrowed_engines = 0;  // lend events where this pool was the borrower
    int final_units = 0;
};

struct EngineMetrics {
    std::size_t engine = 0;
    std::string home_pool;
    double mean_kv_used = 0.0;     // time-weighted over the engine's lifetime
    std::int64_t max_kv_sampled = 0;
    std::int64_t kv_capacity = 0;
    double busy_fraction = 0.0;
};

struct MetricsReport {
    std::size_t arrivals = 0;
    std::size_t arrivals_admitted = 0;
    std::size_t rejected = 0;
    std::size_t completed = 0;
    std::size_t failed_budget = 0;
    std::size_t in_flight_at_end = 0;

    // Requests that arrived after warmup.
    std::size_t measured_completed = 0;
    std::size_t measured_failed = 0;
    double latency_p50 = 0.0;
    double latency_p95 = 0.0;
    double latency_p99 = 0.0;
    double throughput = 0.0;
    double slo_violation_rate = 0.0;

    std::size_t borrows = 0;
    std::size_t returns = 0;
    std::size_t lent_mixed_batches = 0;
    std::size_t events_processed = 0;

    std::vector<PoolMetrics> pools;
    std::vector<EngineMetrics> engines;

    bool conserved() const { return arrivals_admitted == completed + failed_budget + in_flight_at_end; }
    const PoolMetrics* pool(std::string_view name) const;
};

/// Rounds to 9 decimals so serialized output is byte-stable.
double fixed9(double x);

nlohmann::json to_json(const MetricsReport& report);

/// One-line human summary.
std::string summary_line(const MetricsReport& report);

}  // namespace cortex
