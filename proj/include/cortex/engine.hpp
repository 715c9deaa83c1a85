#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "cortex/distribution.hpp"
#include "cortex/errors.hpp"
#include "cortex/workflow.hpp"

namespace cortex {

using EngineId = std::size_t;
using PoolId = std::size_t;

struct EngineParams {
    std::int64_t kv_capacity_tokens = 16384;
    double prefill_rate = 5000.0;      // tokens / second
    double base_token_time = 0.02;     // seconds / token at batch size 1
    double batch_slope = 0.1;          // interference per extra batch member
    int max_batch = 8;

    void validate() const;

    /// Per-token decode latency with `batch` calls decoding together.
    double token_time(std::size_t batch) const {
        return base_token_time * (1.0 + batch_slope * (static_cast<double>(batch) - 1.0));
    }
};

enum class CallPhase { Prefill, Decode };

/// An LLM call waiting for (or being routed to) an engine.
struct LlmCall {
    std::uint64_t request_id = 0;
    StageIndex stage = 0;
    std::int64_t prompt_tokens = 0;
    std::int64_t output_tokens = 0;
};

struct InFlightCall {
    std::uint64_t request_id = 0;
    StageIndex stage = 0;
    std::int64_t prompt_tokens = 0;
    std::int64_t target_output_tokens = 0;
    double tokens_emitted = 0.0;  // fractional progress
    CallPhase phase = CallPhase::Prefill;
    double admitted_at = 0.0;

    /// Whole tokens generated so far; these occupy KV.
    std::int64_t generated_tokens() const;
    double remaining_tokens() const { return static_cast<double>(target_output_tokens) - tokens_emitted; }
};

struct ResidentPrefix {
    StageIndex stage = 0;
    std::int64_t tokens = 0;
    double last_used = 0.0;
};

struct EngineState {
    EngineId engine_id = 0;
    EngineParams params;
    std::vector<ResidentPrefix> resident_prefixes;
    std::vector<InFlightCall> active_batch;
    std::int64_t kv_used_tokens = 0;
    PoolId home_pool = 0;
    std::optional<PoolId> lent_to;
    bool recalled = false;  // lent, draining, no new borrower calls
    bool retired = false;

    // Bumped whenever the decode batch changes; stale completion events carry an old value.
    std::uint64_t version = 0;
    double last_advanced = 0.0;
    double busy_seconds = 0.0;
    double kv_token_seconds = 0.0;
    double started_at = 0.0;

    bool has_prefix(StageIndex stage) const;
    const ResidentPrefix* prefix(StageIndex stage) const;
    std::int64_t resident_prefix_tokens() const;
    std::size_t decode_batch_size() const;
    /// KV the current batch will hold once every call finishes generating.
    std::int64_t kv_committed_tokens() const;
    std::int64_t free_kv_tokens() const { return params.kv_capacity_tokens - kv_committed_tokens(); }
    bool idle() const { return active_batch.empty(); }
    bool serves_stage(StageIndex stage) const;
    const InFlightCall* find_call(std::uint64_t request_id) const;
};

class AdmitWithoutCapacity : public InvariantViolation {
public:
    using InvariantViolation::InvariantViolation;
};

class PrefixInUse : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Prompt + output tokens, plus the stage prefix if it is not resident.
std::int64_t kv_demand(const LlmCall& call, const EngineState& engine, const StageSpec& stage);

bool can_admit(const EngineState& engine, const LlmCall& call, const StageSpec& stage);

/// Admits the call into Prefill and returns when prefill finishes.
double admit(EngineState& engine, const LlmCall& call, const StageSpec& stage, double now);

/// Moves decode progress from `from` to `to`; batch composition must be
/// constant over the interval.
void advance_decode(EngineState& engine, double from, double to);

/// Advances the engine to `now` from wherever it was last left.
void advance_to(EngineState& engine, double now);

struct Completion {
    std::uint64_t request_id;
    double completes_at;
};

std::optional<Completion> next_completion(const EngineState& engine, double now);

/// Prefill finished; the call joins the decode batch.
void begin_decode(EngineState& engine, std::uint64_t request_id);

/// Removes a finished call, snapping its progress to the target and
/// releasing its prompt and generated tokens.
InFlightCall finish_call(EngineState& engine, std::uint64_t request_id, double now);

void evict_idle_prefix(EngineState& engine, StageIndex stage);

/// True when LRU eviction of idle prefixes (other than the call's own stage)
/// would make the call admissible.
bool can_admit_after_eviction(const EngineState& engine, const LlmCall& call, const StageSpec& stage);

/// Evicts idle prefixes, oldest first, until the call fits. Returns false and
/// leaves the engine untouched if it cannot.
bool make_room(EngineState& engine, const LlmCall& call, const StageSpec& stage);

std::int64_t recompute_kv_used(const EngineState& engine);

/// Throws InvariantViolation if accounting, capacity or batch bounds are broken.
void check_engine_invariants(const EngineState& engine);

struct ToolPoolParams {
    int concurrency = 4;
    Distribution service_time = Distribution::constant(0.0);
};

double tool_service_time(const ToolPoolParams& params, RngStream& rng);

}  // namespace cortex
