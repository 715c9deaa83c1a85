#include "cortex/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace cortex {

double percentile(std::span<const double> samples, double q) {
    if (samples.empty()) throw EmptySamples();
    if (!(q > 0.0 && q <= 100.0)) throw std::invalid_argument("percentile rank must lie in (0, 100]");
    std::vector<double> sorted(samples.begin(), samples.end());
    std::sort(sorted.begin(), sorted.end());
    const double n = static_cast<double>(sorted.size());
    // 1e-9 guard keeps exact ranks such as 99/100 * 100 from rounding up.
    auto rank = static_cast<std::size_t>(std::ceil(q / 100.0 * n - 1e-9));
    rank = std::clamp<std::size_t>(rank, 1, sorted.size());
    return sorted[rank - 1];
}

const PoolMetrics* MetricsReport::pool(std::string_view name) const {
    for (const auto& p : pools) {
        if (p.name == name) return &p;
    }
    return nullptr;
}

double fixed9(double x) {
    double r = std::round(x * 1e9) / 1e9;
    return r == 0.0 ? 0.0 : r;  // no negative zero
}

nlohmann::json to_json(const MetricsReport& r) {
    using nlohmann::json;
    json pools = json::array();
    for (const auto& p : r.pools) {
        pools.push_back({{"name", p.name},
                         {"dispatches", p.dispatches},
                         {"mean_queue_delay", fixed9(p.mean_queue_delay)},
                         {"max_queue_len", p.max_queue_len},
                         {"final_queue_len", p.final_queue_len},
                         {"scale_outs", p.scale_outs},
                         {"scale_ins", p.scale_ins},
                         {"borrowed_engines", p.borrowed_engines},
                         {"final_units", p.final_units}});
    }
    json engines = json::array();
    for (const auto& e : r.engines) {
        engines.push_back({{"engine", e.engine},
                           {"home_pool", e.home_pool},
                           {"mean_kv_used", fixed9(e.mean_kv_used)},
                           {"max_kv_sampled", e.max_kv_sampled},
                           {"kv_capacity", e.kv_capacity},
                           {"busy_fraction", fixed9(e.busy_fraction)}});
    }
    return json{{"arrivals", r.arrivals},
                {"arrivals_admitted", r.arrivals_admitted},
                {"rejected", r.rejected},
                {"completed", r.completed},
                {"failed_budget", r.failed_budget},
                {"in_flight_at_end", r.in_flight_at_end},
                {"measured_completed", r.measured_completed},
                {"measured_failed", r.measured_failed},
                {"latency_p50", fixed9(r.latency_p50)},
                {"latency_p95", fixed9(r.latency_p95)},
                {"latency_p99", fixed9(r.latency_p99)},
                {"throughput", fixed9(r.throughput)},
                {"slo_violation_rate", fixed9(r.slo_violation_rate)},
                {"borrows", r.borrows},
                {"returns", r.returns},
                {"lent_mixed_batches", r.lent_mixed_batches},
                {"events_processed", r.events_processed},
                {"pools", pools},
                {"engines", engines}};
}

std::string summary_line(const MetricsReport& r) {
    char buf[320];
    std::snprintf(buf, sizeof buf,
                  "arrivals=%zu admitted=%zu rejected=%zu completed=%zu failed_budget=%zu in_flight=%zu "
                  "throughput=%.4f/s p50=%.3fs p95=%.3fs p99=%.3fs slo_violation=%.4f",
                  r.arrivals, r.arrivals_admitted, r.rejected, r.completed, r.failed_budget, r.in_flight_at_end,
                  r.throughput, r.latency_p50, r.latency_p95, r.latency_p99, r.slo_violation_rate);
    return buf;
}

}  // namespace cortex
