#pragma once

#include <cortex/workflow.hpp>
#include <cortex/workloads.hpp>

namespace testing {

inline cortex::Outcome edge(std::string label, double p, std::string target, bool retry = false) {
    return {std::move(label), p, std::move(target), retry};
}

inline cortex::StageSpec llm(std::string id, std::int64_t prefix, std::vector<cortex::Outcome> outs) {
    cortex::StageSpec s;
    s.id = std::move(id);
    s.kind = cortex::StageKind::LlmCall;
    s.prefix_tokens = prefix;
    s.prompt_tokens = cortex::Distribution::constant(100);
    s.output_tokens = cortex::Distribution::constant(50);
    s.outcomes = std::move(outs);
    return s;
}

inline cortex::StageSpec tool(std::string id, std::vector<cortex::Outcome> outs) {
    cortex::StageSpec s;
    s.id = std::move(id);
    s.kind = cortex::StageKind::ToolCall;
    s.service_time = cortex::Distribution::constant(0.2);
    s.outcomes = std::move(outs);
    return s;
}

// generator -> executor -> {success, syntax_err, empty_result}; fixer -> executor.
inline cortex::WorkflowSpec nl2sql(double p_syntax, double p_empty, int budget) {
    cortex::Nl2SqlParams p;
    p.p_syntax_error = p_syntax;
    p.p_empty_result = p_empty;
    p.retry_budget = budget;
    return cortex::build_nl2sql(p);
}

inline cortex::WorkflowSpec single_stage(double slo = 10.0) {
    cortex::WorkflowSpec w;
    w.name = "single";
    w.entry_stage = "only";
    w.slo_seconds = slo;
    w.stages.push_back(llm("only", 0, {edge("done", 1.0, "Success")}));
    return w;
}

}  // namespace testing

#include <cortex/simulator.hpp>

namespace testing {

inline cortex::SimConfig nl2sql_sim(cortex::PoolMode mode, double rate = 1.0, double duration = 120.0) {
    cortex::SimConfig c;
    c.workflow = cortex::build_nl2sql({});
    c.topology.mode = mode;
    if (mode == cortex::PoolMode::Isolated) {
        c.topology.engines_per_stage = {{"generator", 1}, {"fixer", 1}};
    } else {
        c.topology.total_engines = 2;
    }
    c.arrival_rate = rate;
    c.duration = duration;
    c.warmup = duration / 10.0;
    return c;
}

}  // namespace testing
