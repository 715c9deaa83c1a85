#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "cortex/distribution.hpp"

namespace cortex {

using StageIndex = std::size_t;

enum class StageKind { LlmCall, ToolCall };
enum class Terminal { Success, Failure };

inline constexpr std::string_view kSuccess = "Success";
inline constexpr std::string_view kFailure = "Failure";

std::string_view to_string(StageKind kind);
std::string_view to_string(Terminal terminal);

struct Outcome {
    std::string label;
    double probability = 0.0;
    /// Stage id, or "Success" / "Failure".
    std::string target;
    /// Taking this edge consumes one unit of the retry budget.
    bool counts_retry = false;
};

struct StageSpec {
    std::string id;
    StageKind kind = StageKind::LlmCall;
    std::int64_t prefix_tokens = 0;
    std::optional<Distribution> prompt_tokens;
    std::optional<Distribution> output_tokens;
    std::optional<Distribution> service_time;
    std::vector<Outcome> outcomes;
};

struct WorkflowSpec {
    std::string name;
    std::vector<StageSpec> stages;
    std::string entry_stage;
    int retry_budget = 0;
    double slo_seconds = 0.0;
};

enum class WorkflowErrorKind {
    ProbabilityMassError,
    DanglingTransition,
    UnreachableTerminal,
    UnreachableStage,
    UnboundedCycle,
    InvalidStage,
    DuplicateStage,
    InvalidBudget,
    UnknownOutcome,
    TerminalState,
    MissingEstimate,
};

std::string_view to_string(WorkflowErrorKind kind);

class WorkflowError : public std::runtime_error {
public:
    WorkflowError(WorkflowErrorKind kind, const std::string& detail);
    WorkflowErrorKind kind() const { return kind_; }

private:
    WorkflowErrorKind kind_;
};

using Position = std::variant<StageIndex, Terminal>;

struct Advance {
    StageIndex stage;
    bool operator==(const Advance&) const = default;
};
struct Done {
    Terminal terminal;
    bool operator==(const Done&) const = default;
};
using Transition = std::variant<Advance, Done>;

struct StageVisit {
    StageIndex stage;
    double start;
    double end;
    std::string outcome;
};

struct RequestState {
    std::uint64_t request_id = 0;
    double arrival_time = 0.0;
    double deadline = 0.0;
    Position current = Terminal::Success;
    int retries_used = 0;
    std::vector<StageVisit> stage_history;

    bool terminal() const { return std::holds_alternative<Terminal>(current); }
    StageIndex stage() const { return std::get<StageIndex>(current); }
};

/// A workflow whose graph invariants have been checked. Immutable; safe to
/// share across simulations.
class ValidatedWorkflow {
public:
    struct Edge {
        std::string label;
        double probability;
        Position target;
        bool counts_retry;
    };

    const WorkflowSpec& spec() const { return spec_; }
    const std::string& name() const { return spec_.name; }
    std::size_t stage_count() const { return spec_.stages.size(); }
    const StageSpec& stage(StageIndex i) const { return spec_.stages.at(i); }
    StageIndex entry() const { return entry_; }
    int retry_budget() const { return spec_.retry_budget; }
    double slo_seconds() const { return spec_.slo_seconds; }
    std::span<const Edge> edges(StageIndex i) const { return edges_.at(i); }
    std::optional<StageIndex> find(std::string_view id) const;
    StageIndex index_of(std::string_view id) const;

    /// Probability that the stage's outcome terminates the workflow.
    double selectivity(StageIndex i) const;

    /// Index of the edge selected by uniform draw u in [0, 1).
    std::size_t pick_outcome(StageIndex i, double u) const;

    RequestState start_request(std::uint64_t request_id, double arrival_time) const;

private:
    friend ValidatedWorkflow validate_workflow(WorkflowSpec spec);
    ValidatedWorkflow() = default;

    WorkflowSpec spec_;
    StageIndex entry_ = 0;
    std::vector<std::vector<Edge>> edges_;
};

ValidatedWorkflow validate_workflow(WorkflowSpec spec);

struct StepResult {
    Transition transition;
    RequestState state;
};

/// Applies `outcome` at the request's current stage. A retry edge taken with
/// the budget already spent yields Done(Failure).
StepResult next_step(const RequestState& state, std::string_view outcome,
                     const ValidatedWorkflow& workflow);

/// Expected fixer calls when each execution fails independently with
/// probability p_fail and at most `budget` fixes happen.
double expected_fixer_invocations(double p_fail, int budget);

/// Per-stage mean service seconds, keyed by stage id.
using ServiceEstimates = std::map<std::string, double, std::less<>>;

/// Expected remaining service time for every (stage, retries_used) pair.
class RemainingWorkTable {
public:
    RemainingWorkTable(const ValidatedWorkflow& workflow, const ServiceEstimates& estimates);

    double at(StageIndex stage, int retries_used) const;
    double at(const Position& position, int retries_used) const;
    double estimate(StageIndex stage) const { return estimates_.at(stage); }

private:
    int budget_;
    std::vector<double> estimates_;
    std::vector<double> table_;  // stage-major, (budget + 1) per stage
};

double expected_remaining_work(const RequestState& state, const ValidatedWorkflow& workflow,
                               const ServiceEstimates& estimates);

}  // namespace cortex
