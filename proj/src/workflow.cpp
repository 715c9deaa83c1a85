#include "cortex/workflow.hpp"

#include <cmath>
#include <functional>
#include <set>

namespace cortex {

std::string_view to_string(StageKind kind) {
    return kind == StageKind::LlmCall ? "llm" : "tool";
}

std::string_view to_string(Terminal terminal) {
    return terminal == Terminal::Success ? kSuccess : kFailure;
}

std::string_view to_string(WorkflowErrorKind kind) {
    switch (kind) {
        case WorkflowErrorKind::ProbabilityMassError: return "ProbabilityMassError";
        case WorkflowErrorKind::DanglingTransition: return "DanglingTransition";
        case WorkflowErrorKind::UnreachableTerminal: return "UnreachableTerminal";
        case WorkflowErrorKind::UnreachableStage: return "UnreachableStage";
        case WorkflowErrorKind::UnboundedCycle: return "UnboundedCycle";
        case WorkflowErrorKind::InvalidStage: return "InvalidStage";
        case WorkflowErrorKind::DuplicateStage: return "DuplicateStage";
        case WorkflowErrorKind::InvalidBudget: return "InvalidBudget";
        case WorkflowErrorKind::UnknownOutcome: return "UnknownOutcome";
        case WorkflowErrorKind::TerminalState: return "TerminalState";
        case WorkflowErrorKind::MissingEstimate: return "MissingEstimate";
    }
    return "WorkflowError";
}

WorkflowError::WorkflowError(WorkflowErrorKind kind, const std::string& detail)
    : std::runtime_error(std::string(to_string(kind)) + ": " + detail), kind_(kind) {}

namespace {

constexpr double kMassTolerance = 1e-9;

[[noreturn]] void fail(WorkflowErrorKind kind, const std::string& detail) {
    throw WorkflowError(kind, detail);
}

bool is_terminal_name(std::string_view s) { return s == kSuccess || s == kFailure; }

void check_stage_fields(const StageSpec& s) {
    if (s.kind == StageKind::LlmCall) {
        if (s.prefix_tokens < 0) {
            fail(WorkflowErrorKind::InvalidStage, "stage '" + s.id + "' has negative prefix_tokens");
        }
        if (!s.prompt_tokens || !s.output_tokens) {
            fail(WorkflowErrorKind::InvalidStage,
                 "llm stage '" + s.id + "' needs prompt_tokens and output_tokens distributions");
        }
        if (s.service_time) {
            fail(WorkflowErrorKind::InvalidStage,
                 "llm stage '" + s.id + "' must not carry a service_time distribution");
        }
    } else {
        if (!s.service_time) {
            fail(WorkflowErrorKind::InvalidStage,
                 "tool stage '" + s.id + "' needs a service_time distribution");
        }
        if (s.prefix_tokens != 0 || s.prompt_tokens || s.output_tokens) {
            fail(WorkflowErrorKind::InvalidStage, "tool stage '" + s.id + "' must have zero token fields");
        }
    }
}

void check_outcome_mass(const StageSpec& s) {
    if (s.outcomes.empty()) {
        fail(WorkflowErrorKind::ProbabilityMassError, "stage '" + s.id + "' has no outcomes");
    }
    double mass = 0.0;
    std::set<std::string, std::less<>> labels;
    for (const auto& o : s.outcomes) {
        if (!std::isfinite(o.probability) || o.probability < 0.0 || o.probability > 1.0) {
            fail(WorkflowErrorKind::ProbabilityMassError,
                 "stage '" + s.id + "' outcome '" + o.label + "' has probability outside [0,1]");
        }
        if (!labels.insert(o.label).second) {
            fail(WorkflowErrorKind::InvalidStage,
                 "stage '" + s.id + "' repeats outcome label '" + o.label + "'");
        }
        mass += o.probability;
    }
    if (std::abs(mass - 1.0) > kMassTolerance) {
        fail(WorkflowErrorKind::ProbabilityMassError,
             "stage '" + s.id + "' outcome probabilities sum to " + std::to_string(mass));
    }
}

}  // namespace

ValidatedWorkflow validate_workflow(WorkflowSpec spec) {
    if (spec.retry_budget < 0) {
        fail(WorkflowErrorKind::InvalidBudget, "retry_budget must be >= 0");
    }
    if (!std::isfinite(spec.slo_seconds) || spec.slo_seconds <= 0.0) {
        fail(WorkflowErrorKind::InvalidBudget, "slo_seconds must be positive");
    }
    if (spec.stages.empty()) {
        fail(WorkflowErrorKind::DanglingTransition, "workflow has no stages");
    }

    std::map<std::string, StageIndex, std::less<>> index;
    for (StageIndex i = 0; i < spec.stages.size(); ++i) {
        const auto& id = spec.stages[i].id;
        if (id.empty() || is_terminal_name(id)) {
            fail(WorkflowErrorKind::InvalidStage, "invalid stage id '" + id + "'");
        }
        if (!index.emplace(id, i).second) {
            fail(WorkflowErrorKind::DuplicateStage, "stage id '" + id + "' appears twice");
        }
    }
    for (const auto& s : spec.stages) {
        check_stage_fields(s);
        check_outcome_mass(s);
    }

    ValidatedWorkflow wf;
    wf.edges_.resize(spec.stages.size());
    for (StageIndex i = 0; i < spec.stages.size(); ++i) {
        for (const auto& o : spec.stages[i].outcomes) {
            Position target;
            if (o.target == kSuccess) {
                target = Terminal::Success;
            } else if (o.target == kFailure) {
                target = Terminal::Failure;
            } else if (auto it = index.find(o.target); it != index.end()) {
                target = it->second;
            } else {
                fail(WorkflowErrorKind::DanglingTransition, "stage '" + spec.stages[i].id + "' outcome '" +
                                                                o.label + "' targets unknown '" + o.target +
                                                                "'");
            }
            wf.edges_[i].push_back({o.label, o.probability, target, o.counts_retry});
        }
    }
    auto entry = index.find(spec.entry_stage);
    if (entry == index.end()) {
        fail(WorkflowErrorKind::DanglingTransition, "entry stage '" + spec.entry_stage + "' does not exist");
    }
    wf.entry_ = entry->second;

    // Structural reachability: edges count regardless of their probability.
    std::vector<bool> seen(spec.stages.size(), false);
    bool success_reachable = false;
    std::vector<StageIndex> stack{wf.entry_};
    seen[wf.entry_] = true;
    while (!stack.empty()) {
        StageIndex s = stack.back();
        stack.pop_back();
        for (const auto& e : wf.edges_[s]) {
            if (const auto* t = std::get_if<StageIndex>(&e.target)) {
                if (!seen[*t]) {
                    seen[*t] = true;
                    stack.push_back(*t);
                }
            } else if (std::get<Terminal>(e.target) == Terminal::Success) {
                success_reachable = true;
            }
        }
    }
    if (!success_reachable) {
        fail(WorkflowErrorKind::UnreachableTerminal, "Success is not reachable from '" + spec.entry_stage + "'");
    }
    for (StageIndex i = 0; i < seen.size(); ++i) {
        if (!seen[i]) {
            fail(WorkflowErrorKind::UnreachableStage,
                 "stage '" + spec.stages[i].id + "' is not reachable from the entry stage");
        }
    }

    // Every cycle must pass through a retry edge: the non-retry subgraph is a DAG.
    enum class Mark { White, Grey, Black };
    std::vector<Mark> mark(spec.stages.size(), Mark::White);
    std::function<void(StageIndex)> visit = [&](StageIndex s) {
        mark[s] = Mark::Grey;
        for (const auto& e : wf.edges_[s]) {
            const auto* t = std::get_if<StageIndex>(&e.target);
            if (!t || e.counts_retry) {
                continue;
            }
            if (mark[*t] == Mark::Grey) {
                fail(WorkflowErrorKind::UnboundedCycle, "cycle through '" + spec.stages[*t].id +
                                                            "' has no retry-budget edge");
            }
            if (mark[*t] == Mark::White) {
                visit(*t);
            }
        }
        mark[s] = Mark::Black;
    };
    for (StageIndex i = 0; i < spec.stages.size(); ++i) {
        if (mark[i] == Mark::White) {
            visit(i);
        }
    }

    wf.spec_ = std::move(spec);
    return wf;
}

std::optional<StageIndex> ValidatedWorkflow::find(std::string_view id) const {
    for (StageIndex i = 0; i < spec_.stages.size(); ++i) {
        if (spec_.stages[i].id == id) {
            return i;
        }
    }
    return std::nullopt;
}

StageIndex ValidatedWorkflow::index_of(std::string_view id) const {
    if (auto i = find(id)) {
        return *i;
    }
    throw WorkflowError(WorkflowErrorKind::DanglingTransition, "unknown stage '" + std::string(id) + "'");
}

double ValidatedWorkflow::selectivity(StageIndex i) const {
    double p = 0.0;
    for (const auto& e : edges(i)) {
        if (std::holds_alternative<Terminal>(e.target)) {
            p += e.probability;
        }
    }
    return p;
}

std::size_t ValidatedWorkflow::pick_outcome(StageIndex i, double u) const {
    const auto es = edges(i);
    double cumulative = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t k = 0; k < es.size(); ++k) {
        if (es[k].probability <= 0.0) {
            continue;
        }
        last_positive = k;
        cumulative += es[k].probability;
        if (u < cumulative) {
            return k;
        }
    }
    return last_positive;
}

RequestState ValidatedWorkflow::start_request(std::uint64_t request_id, double arrival_time) const {
    RequestState r;
    r.request_id = request_id;
    r.arrival_time = arrival_time;
    r.deadline = arrival_time + spec_.slo_seconds;
    r.current = entry_;
    return r;
}

StepResult next_step(const RequestState& state, std::string_view outcome, const ValidatedWorkflow& workflow) {
    if (state.terminal()) {
        throw WorkflowError(WorkflowErrorKind::TerminalState,
                            "request " + std::to_string(state.request_id) + " already finished");
    }
    const StageIndex stage = state.stage();
    for (const auto& e : workflow.edges(stage)) {
        if (e.label != outcome) {
            continue;
        }
        StepResult result{Done{Terminal::Failure}, state};
        if (e.counts_retry && std::holds_alternative<StageIndex>(e.target) &&
            state.retries_used >= workflow.retry_budget()) {
            result.state.current = Terminal::Failure;
            return result;
        }
        if (e.counts_retry && std::holds_alternative<StageIndex>(e.target)) {
            ++result.state.retries_used;
        }
        result.state.current = e.target;
        if (const auto* t = std::get_if<StageIndex>(&e.target)) {
            result.transition = Advance{*t};
        } else {
            result.transition = Done{std::get<Terminal>(e.target)};
        }
        return result;
    }
    throw WorkflowError(WorkflowErrorKind::UnknownOutcome, "stage '" + workflow.stage(stage).id +
                                                               "' has no outcome '" + std::string(outcome) + "'");
}

double expected_fixer_invocations(double p_fail, int budget) {
    if (budget <= 0 || p_fail <= 0.0) {
        return 0.0;
    }
    if (p_fail >= 1.0) {
        return static_cast<double>(budget);
    }
    return p_fail * (1.0 - std::pow(p_fail, budget)) / (1.0 - p_fail);
}

RemainingWorkTable::RemainingWorkTable(const ValidatedWorkflow& workflow, const ServiceEstimates& estimates)
    : budget_(workflow.retry_budget()) {
    const std::size_t n = workflow.stage_count();
    estimates_.resize(n);
    for (StageIndex s = 0; s < n; ++s) {
        auto it = estimates.find(workflow.stage(s).id);
        if (it == estimates.end()) {
            throw WorkflowError(WorkflowErrorKind::MissingEstimate,
                                "no service estimate for stage '" + workflow.stage(s).id + "'");
        }
        estimates_[s] = it->second;
    }

    const std::size_t width = static_cast<std::size_t>(budget_) + 1;
    table_.assign(n * width, 0.0);
    std::vector<bool> done(n * width, false);
    // Non-retry edges form a DAG (checked at validation), so this recursion
    // terminates; retry edges only move to r + 1, which is filled first.
    std::function<double(StageIndex, int)> solve = [&](StageIndex s, int r) -> double {
        const std::size_t slot = s * width + static_cast<std::size_t>(r);
        if (done[slot]) {
            return table_[slot];
        }
        double total = estimates_[s];
        for (const auto& e : workflow.edges(s)) {
            const auto* t = std::get_if<StageIndex>(&e.target);
            if (!t || e.probability == 0.0) {
                continue;
            }
            if (e.counts_retry) {
                if (r < budget_) {
                    total += e.probability * solve(*t, r + 1);
                }
            } else {
                total += e.probability * solve(*t, r);
            }
        }
        table_[slot] = total;
        done[slot] = true;
        return total;
    };
    for (int r = budget_; r >= 0; --r) {
        for (StageIndex s = 0; s < n; ++s) {
            solve(s, r);
        }
    }
}

double RemainingWorkTable::at(StageIndex stage, int retries_used) const {
    if (retries_used < 0 || retries_used > budget_) {
        throw std::out_of_range("retries_used outside [0, budget]");
    }
    return table_.at(stage * (static_cast<std::size_t>(budget_) + 1) + static_cast<std::size_t>(retries_used));
}

double RemainingWorkTable::at(const Position& position, int retries_used) const {
    if (const auto* s = std::get_if<StageIndex>(&position)) {
        return at(*s, retries_used);
    }
    return 0.0;
}

double expected_remaining_work(const RequestState& state, const ValidatedWorkflow& workflow,
                               const ServiceEstimates& estimates) {
    if (state.terminal()) {
        return 0.0;
    }
    return RemainingWorkTable(workflow, estimates).at(state.current, state.retries_used);
}

}  // namespace cortex
