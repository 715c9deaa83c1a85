#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cortex/engine.hpp"
#include "cortex/workflow.hpp"

namespace cortex {

/// Which ordering a pool queue uses.
enum class PolicyKind { Fcfs, WorkflowAgnosticPriority, CortexFull };

std::string_view to_string(PolicyKind kind);

/// Dispatch ordering: ascending slack, ascending expected stage service,
/// descending selectivity (when present on both sides), ascending arrival_seq.
///
/// Baseline policies reuse the same shape: FCFS leaves the first two fields
/// at zero, least-attained-service puts the attained seconds in `slack`.
struct PriorityKey {
    double slack = 0.0;
    double expected_stage_service = 0.0;
    std::optional<double> selectivity;
    std::uint64_t arrival_seq = 0;
};

/// Strict total order on keys.
bool precedes(const PriorityKey& a, const PriorityKey& b);

struct KeyConfig {
    PolicyKind policy = PolicyKind::CortexFull;
    bool use_selectivity = false;
};

/// A stage call sitting in a pool queue. Everything the key needs is
/// snapshotted at enqueue time except `now`.
struct PendingCall {
    std::uint64_t request_id = 0;
    std::uint64_t arrival_seq = 0;  // request arrival order
    std::uint64_t enqueue_seq = 0;  // call arrival order, used by FCFS
    StageIndex stage = 0;
    int retries_used = 0;
    double enqueue_time = 0.0;
    double deadline = 0.0;
    double remaining_work = 0.0;
    double expected_service = 0.0;
    double selectivity = 0.0;
    double attained_service = 0.0;
    std::int64_t prompt_tokens = 0;
    std::int64_t output_tokens = 0;
    double tool_service = 0.0;

    LlmCall llm_call() const { return {request_id, stage, prompt_tokens, output_tokens}; }
};

PriorityKey key_for(const PendingCall& call, double now, const KeyConfig& config);

double compute_slack(const RequestState& req, double now, const RemainingWorkTable& work);
double compute_slack(const RequestState& req, double now, const ValidatedWorkflow& workflow,
                     const ServiceEstimates& estimates);

PriorityKey make_priority_key(const RequestState& req, double now, const ValidatedWorkflow& workflow,
                              const RemainingWorkTable& work, bool use_selectivity);

struct AdmissionConfig {
    bool enabled = false;
    std::size_t max_queue_len = 64;
    void validate() const;
};

struct BorrowConfig {
    bool enabled = false;
    double util_low = 0.3;
    double util_high = 0.8;
    std::int64_t min_free_kv_tokens = 0;
    void validate() const;
};

struct AutoscaleConfig {
    bool enabled = false;
    double check_interval = 5.0;
    double queue_delay_slo = 2.0;
    double scale_out_threshold = 0.5;
    double scale_in_threshold = 0.05;
    double cooldown = 10.0;
    int min_engines = 1;
    int max_engines = 16;
    void validate() const;
};

enum class PoolKind { Llm, Tool };

/// A stage-local pool: its stages, its engines (or tool slots) and its queue.
struct Pool {
    PoolId id = 0;
    std::string name;
    PoolKind kind = PoolKind::Llm;
    std::vector<StageIndex> stage_ids;
    std::vector<EngineId> engines;  // home engines, including lent ones
    std::vector<PendingCall> queue;
    int tool_concurrency = 0;
    int tool_busy = 0;
    AdmissionConfig admission;
    BorrowConfig borrow;
    AutoscaleConfig autoscale;
    double last_scale_time = -std::numeric_limits<double>::infinity();

    bool accepts(StageIndex stage) const;
};
using PoolPolicy = Pool;

/// Index into pool.queue of the call with the minimal key at `now`.
std::optional<std::size_t> select_next(const Pool& pool, double now, const KeyConfig& config);

/// Engines currently dispatching for `pool`: its own unlent engines plus
/// borrowed ones that have not been recalled.
std::vector<EngineId> serving_engines(const Pool& pool, std::span<const EngineState> engines);

/// Warm-prefix engines first, then least kv_used, then lowest id.
std::optional<EngineId> route_call(const Pool& pool, const LlmCall& call, const StageSpec& stage,
                                   std::span<const EngineState> engines);

/// Same ordering, over engines that could admit after evicting idle prefixes.
std::optional<EngineId> route_with_eviction(const Pool& pool, const LlmCall& call, const StageSpec& stage,
                                            std::span<const EngineState> engines);

enum class Admission { Accept, Reject };

Admission admission_decision(std::span<const Pool> pools);

struct BorrowDecision {
    EngineId engine;
    PoolId lender;
    PoolId borrower;
};

std::optional<BorrowDecision> try_borrow(std::span<const Pool> pools, std::span<const EngineState> engines,
                                         std::span<const double> utilization, const ValidatedWorkflow& workflow);

void apply_borrow(const BorrowDecision& decision, std::span<EngineState> engines);

/// Returns the engine home once it drains and either its home pool is hot
/// or the borrower has cooled. A lent engine that should go home but is
/// still busy gets `recalled` so no new borrower calls land on it.
/// Returns true when the engine actually went home.
bool return_borrowed(EngineState& engine, std::span<const Pool> pools, std::span<const double> utilization);

struct WindowMetrics {
    std::size_t dispatches = 0;
    std::size_t delayed = 0;     // queueing delay above queue_delay_slo
    std::size_t units = 0;       // engines, or tool slots
    std::size_t idle_units = 0;
    double violation_fraction() const {
        return dispatches == 0 ? 0.0 : static_cast<double>(delayed) / static_cast<double>(dispatches);
    }
};

/// Scheduling policy for a whole simulation; copied into every pool.
struct PolicyConfig {
    PolicyKind kind = PolicyKind::CortexFull;
    bool use_selectivity = false;
    /// Refine per-stage service estimates with an exponentially weighted mean.
    bool online_estimates = false;
    double estimate_weight = 0.2;
    AdmissionConfig admission;
    BorrowConfig borrow;
    AutoscaleConfig autoscale;

    void validate() const;
    KeyConfig key_config() const { return {kind, use_selectivity}; }
};

enum class ScaleDecision : int { In = -1, Hold = 0, Out = 1 };

ScaleDecision autoscale_tick(const Pool& pool, const WindowMetrics& window, double now);

}  // namespace cortex
