#pragma once

#include <cstdint>
#include <string>

#include "cortex/metrics.hpp"
#include "cortex/rng.hpp"
#include "cortex/scheduler.hpp"
#include "cortex/trace.hpp"
#include "cortex/workflow.hpp"
#include "cortex/workloads.hpp"

namespace cortex {

struct SimConfig {
    WorkflowSpec workflow;
    TopologyPreset topology;
    PolicyConfig policy;
    double arrival_rate = 1.0;  // Poisson, requests / second
    double duration = 60.0;
    double warmup = 0.0;
    std::uint64_t seed = 1;
    double kv_sample_interval = 1.0;  // 0 disables periodic KV samples
    /// Per-stage overrides of the default service estimates.
    ServiceEstimates service_estimates;

    /// Throws ConfigError or WorkflowError.
    void validate() const;
};

struct SimResult {
    MetricsReport metrics;
    Traces traces;
};

/// Runs one simulation to completion. Pure function of the config.
SimResult run(const SimConfig& config);

/// Exponential inter-arrival time by inverse CDF, -ln(u) / rate with u in (0, 1].
double sample_interarrival(RngStream& rng, double rate);
double interarrival_from_uniform(double u, double rate);

}  // namespace cortex
