#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cortex/engine.hpp"
#include "cortex/scheduler.hpp"

namespace cortex {

struct KvSample {
    double time = 0.0;
    PoolId pool = 0;  // pool the engine serves at sample time
    EngineId engine = 0;
    std::int64_t kv_used_tokens = 0;
    std::int64_t resident_prefix_tokens = 0;
};

enum class QueueEvent { Enqueue, Dispatch };

/// One row of the dispatch audit log. Enqueue rows carry the key inputs
/// that stay fixed while a call waits; dispatch rows carry the key as
/// evaluated at dispatch time and the engine chosen.
struct DispatchRecord {
    double time = 0.0;
    PoolId pool = 0;
    std::uint64_t request = 0;
    QueueEvent event = QueueEvent::Enqueue;
    StageIndex stage = 0;
    double slack = 0.0;
    double expected_service = 0.0;
    std::optional<double> selectivity;
    std::uint64_t key_seq = 0;
    double deadline = 0.0;
    double remaining_work = 0.0;
    double attained = 0.0;
    std::optional<EngineId> engine;  // empty for tool pools
};

enum class RequestOutcome { Success, Failure };

struct RequestRecord {
    std::uint64_t request = 0;
    double arrival = 0.0;
    double done = 0.0;
    RequestOutcome outcome = RequestOutcome::Success;
    double latency = 0.0;
    bool violated_slo = false;
};

struct Traces {
    std::vector<std::string> pool_names;
    std::vector<std::string> stage_names;
    PolicyKind policy = PolicyKind::CortexFull;
    std::vector<KvSample> kv;
    std::vector<DispatchRecord> dispatch;
    std::vector<RequestRecord> requests;
};

/// Fixed 9-decimal formatting used by every CSV column holding seconds.
std::string format_seconds(double x);

void write_kv_usage_csv(std::ostream& os, const Traces& traces);
void write_dispatch_csv(std::ostream& os, const Traces& traces);
void write_requests_csv(std::ostream& os, const Traces& traces);

struct AuditResult {
    std::size_t enqueues = 0;
    std::size_t dispatches = 0;
    std::size_t violations = 0;
    std::vector<std::string> messages;  // first few violations
    bool ok() const { return violations == 0; }
};

/// Replays dispatch.csv: rebuilds every pool queue from the enqueue rows and
/// checks that each dispatched call had the minimal key in its queue at the
/// dispatch instant. Key differences within `tolerance` that the printed
/// precision cannot resolve are not counted as violations.
AuditResult audit_dispatch_log(std::istream& csv, double tolerance = 1e-8);

}  // namespace cortex
