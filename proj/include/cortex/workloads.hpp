#pragma once

#include <map>
#include <string>
#include <vector>

#include "cortex/distribution.hpp"
#include "cortex/engine.hpp"
#include "cortex/scheduler.hpp"
#include "cortex/workflow.hpp"

namespace cortex {

/// Knobs for the generator -> executor -> fixer loop.
struct Nl2SqlParams {
    double p_syntax_error = 0.3;
    double p_empty_result = 0.2;
    int retry_budget = 3;
    std::int64_t generator_prefix_tokens = 1000;
    std::int64_t fixer_prefix_tokens = 1000;
    Distribution generator_prompt_tokens = Distribution::uniform(100, 300);
    Distribution generator_output_tokens = Distribution::uniform(50, 150);
    Distribution fixer_prompt_tokens = Distribution::uniform(100, 300);
    Distribution fixer_output_tokens = Distribution::uniform(50, 150);
    Distribution executor_service_time = Distribution::uniform(0.1, 0.4);
    double slo_seconds = 30.0;

    double p_fail() const { return p_syntax_error + p_empty_result; }
};

inline constexpr std::string_view kGenerator = "generator";
inline constexpr std::string_view kExecutor = "executor";
inline constexpr std::string_view kFixer = "fixer";

WorkflowSpec build_nl2sql(const Nl2SqlParams& params);

enum class PoolMode { Isolated, Shared };

std::string_view to_string(PoolMode mode);

struct TopologyPreset {
    PoolMode mode = PoolMode::Isolated;
    /// Isolated mode: engines per LLM stage id.
    std::map<std::string, int, std::less<>> engines_per_stage;
    /// Shared mode: one pool serving every LLM stage.
    int total_engines = 0;
    EngineParams engine;
    /// Tool slots per tool stage id; stages not listed get kDefaultToolConcurrency.
    std::map<std::string, int, std::less<>> tool_concurrency;

    static constexpr int kDefaultToolConcurrency = 4;
};

struct PoolSpec {
    std::string name;
    PoolKind kind = PoolKind::Llm;
    std::vector<StageIndex> stages;
    int engine_count = 0;    // LLM pools
    int concurrency = 0;     // tool pools
};

struct PoolLayout {
    std::vector<PoolSpec> pools;

    int llm_engine_total() const;
};

/// Isolated: one pool per stage. Shared: one pool for all LLM stages.
/// Tool pools are identical in both modes.
PoolLayout build_topology(const TopologyPreset& preset, const ValidatedWorkflow& workflow);

struct BaselinePolicy {
    PolicyKind kind = PolicyKind::Fcfs;
};

/// Seconds of service a request has received so far.
double attained_service(const RequestState& req);

PriorityKey baseline_key(const BaselinePolicy& policy, const RequestState& req, double now,
                         const ValidatedWorkflow& workflow, const RemainingWorkTable& work,
                         bool use_selectivity = false);

/// Mean seconds per stage: prefill of a mean prompt plus mean output at
/// batch size one for LLM stages, mean service time for tools.
ServiceEstimates default_service_estimates(const ValidatedWorkflow& workflow, const EngineParams& engine);

}  // namespace cortex
