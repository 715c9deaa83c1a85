#include "cortex/workloads.hpp"

#include "cortex/errors.hpp"

namespace cortex {

WorkflowSpec build_nl2sql(const Nl2SqlParams& params) {
    const double p_fail = params.p_fail();
    if (params.p_syntax_error < 0 || params.p_empty_result < 0 || p_fail > 1.0 + 1e-12) {
        throw ConfigError("nl2sql failure probabilities must be non-negative and sum to at most 1");
    }

    StageSpec generator;
    generator.id = std::string(kGenerator);
    generator.kind = StageKind::LlmCall;
    generator.prefix_tokens = params.generator_prefix_tokens;
    generator.prompt_tokens = params.generator_prompt_tokens;
    generator.output_tokens = params.generator_output_tokens;
    generator.outcomes = {{"generated", 1.0, std::string(kExecutor), false}};

    StageSpec executor;
    executor.id = std::string(kExecutor);
    executor.kind = StageKind::ToolCall;
    executor.service_time = params.executor_service_time;
    executor.outcomes = {
        {"success", 1.0 - p_fail, std::string(kSuccess), false},
        {"syntax_err", params.p_syntax_error, std::string(kFixer), true},
        {"empty_result", params.p_empty_result, std::string(kFixer), true},
    };

    StageSpec fixer;
    fixer.id = std::string(kFixer);
    fixer.kind = StageKind::LlmCall;
    fixer.prefix_tokens = params.fixer_prefix_tokens;
    fixer.prompt_tokens = params.fixer_prompt_tokens;
    fixer.output_tokens = params.fixer_output_tokens;
    fixer.outcomes = {{"fixed", 1.0, std::string(kExecutor), false}};

    WorkflowSpec spec;
    spec.name = "nl2sql";
    spec.stages = {generator, executor, fixer};
    spec.entry_stage = std::string(kGenerator);
    spec.retry_budget = params.retry_budget;
    spec.slo_seconds = params.slo_seconds;
    // Surface graph errors here rather than at simulation time.
    validate_workflow(spec);
    return spec;
}

std::string_view to_string(PoolMode mode) { return mode == PoolMode::Isolated ? "isolated" : "shared"; }

int PoolLayout::llm_engine_total() const {
    int total = 0;
    for (const auto& p : pools) {
        if (p.kind == PoolKind::Llm) total += p.engine_count;
    }
    return total;
}

PoolLayout build_topology(const TopologyPreset& preset, const ValidatedWorkflow& workflow) {
    preset.engine.validate();
    for (const auto& [id, count] : preset.engines_per_stage) {
        auto s = workflow.find(id);
        if (!s || workflow.stage(*s).kind != StageKind::LlmCall) {
            throw ConfigError("topology.engines names '" + id + "', which is not an LLM stage");
        }
    }
    for (const auto& [id, count] : preset.tool_concurrency) {
        auto s = workflow.find(id);
        if (!s || workflow.stage(*s).kind != StageKind::ToolCall) {
            throw ConfigError("topology.tools names '" + id + "', which is not a tool stage");
        }
        if (count < 1) throw ConfigError("tool pool '" + id + "' needs concurrency >= 1");
    }

    PoolLayout layout;
    if (preset.mode == PoolMode::Shared) {
        PoolSpec shared;
        shared.name = "shared";
        for (StageIndex s = 0; s < workflow.stage_count(); ++s) {
            if (workflow.stage(s).kind == StageKind::LlmCall) shared.stages.push_back(s);
        }
        if (!shared.stages.empty()) {
            if (preset.total_engines < 1) throw ConfigError("shared topology needs total_engines >= 1");
            shared.engine_count = preset.total_engines;
            layout.pools.push_back(shared);
        }
    } else {
        for (StageIndex s = 0; s < workflow.stage_count(); ++s) {
            const auto& stage = workflow.stage(s);
            if (stage.kind != StageKind::LlmCall) continue;
            auto it = preset.engines_per_stage.find(stage.id);
            if (it == preset.engines_per_stage.end() || it->second < 1) {
                throw ConfigError("isolated pool '" + stage.id + "' needs at least one engine");
            }
            layout.pools.push_back({stage.id, PoolKind::Llm, {s}, it->second, 0});
        }
    }
    for (StageIndex s = 0; s < workflow.stage_count(); ++s) {
        const auto& stage = workflow.stage(s);
        if (stage.kind != StageKind::ToolCall) continue;
        auto it = preset.tool_concurrency.find(stage.id);
        const int slots = it == preset.tool_concurrency.end() ? TopologyPreset::kDefaultToolConcurrency : it->second;
        layout.pools.push_back({stage.id, PoolKind::Tool, {s}, 0, slots});
    }
    return layout;
}

double attained_service(const RequestState& req) {
    double total = 0.0;
    for (const auto& v : req.stage_history) total += v.end - v.start;
    return total;
}

PriorityKey baseline_key(const BaselinePolicy& policy, const RequestState& req, double now,
                         const ValidatedWorkflow& workflow, const RemainingWorkTable& work, bool use_selectivity) {
    switch (policy.kind) {
        case PolicyKind::Fcfs: {
            PriorityKey key;
            key.arrival_seq = req.request_id;
            return key;
        }
        case PolicyKind::WorkflowAgnosticPriority: {
            PriorityKey key;
            key.slack = attained_service(req);
            key.arrival_seq = req.request_id;
            return key;
        }
        case PolicyKind::CortexFull:
            return make_priority_key(req, now, workflow, work, use_selectivity);
    }
    return {};
}

ServiceEstimates default_service_estimates(const ValidatedWorkflow& workflow, const EngineParams& engine) {
    ServiceEstimates out;
    for (StageIndex s = 0; s < workflow.stage_count(); ++s) {
        const auto& stage = workflow.stage(s);
        if (stage.kind == StageKind::LlmCall) {
            out[stage.id] = stage.prompt_tokens->mean() / engine.prefill_rate +
                            stage.output_tokens->mean() * engine.base_token_time;
        } else {
            out[stage.id] = stage.service_time->mean();
        }
    }
    return out;
}

}  // namespace cortex
