#include "cortex/scheduler.hpp"

#include <algorithm>
#include <cmath>

namespace cortex {

std::string_view to_string(PolicyKind kind) {
    switch (kind) {
        case PolicyKind::Fcfs: return "fcfs";
        case PolicyKind::WorkflowAgnosticPriority: return "las";
        case PolicyKind::CortexFull: return "cortex";
    }
    return "unknown";
}

bool precedes(const PriorityKey& a, const PriorityKey& b) {
    if (a.slack != b.slack) return a.slack < b.slack;
    if (a.expected_stage_service != b.expected_stage_service) {
        return a.expected_stage_service < b.expected_stage_service;
    }
    if (a.selectivity && b.selectivity && *a.selectivity != *b.selectivity) {
        return *a.selectivity > *b.selectivity;
    }
    return a.arrival_seq < b.arrival_seq;
}

PriorityKey key_for(const PendingCall& call, double now, const KeyConfig& config) {
    PriorityKey key;
    switch (config.policy) {
        case PolicyKind::Fcfs:
            key.arrival_seq = call.enqueue_seq;
            break;
        case PolicyKind::WorkflowAgnosticPriority:
            key.slack = call.attained_service;
            key.arrival_seq = call.arrival_seq;
            break;
        case PolicyKind::CortexFull:
            key.slack = call.deadline - now - call.remaining_work;
            key.expected_stage_service = call.expected_service;
            if (config.use_selectivity) key.selectivity = call.selectivity;
            key.arrival_seq = call.arrival_seq;
            break;
    }
    return key;
}

double compute_slack(const RequestState& req, double now, const RemainingWorkTable& work) {
    return req.deadline - now - work.at(req.current, req.retries_used);
}

double compute_slack(const RequestState& req, double now, const ValidatedWorkflow& workflow,
                     const ServiceEstimates& estimates) {
    return req.deadline - now - expected_remaining_work(req, workflow, estimates);
}

PriorityKey make_priority_key(const RequestState& req, double now, const ValidatedWorkflow& workflow,
                              const RemainingWorkTable& work, bool use_selectivity) {
    PriorityKey key;
    key.slack = compute_slack(req, now, work);
    key.arrival_seq = req.request_id;
    if (!req.terminal()) {
        key.expected_stage_service = work.estimate(req.stage());
        if (use_selectivity) key.selectivity = workflow.selectivity(req.stage());
    }
    return key;
}

void AdmissionConfig::validate() const {
    if (enabled && max_queue_len < 1) throw ConfigError("admission.max_queue_len must be >= 1");
}

void BorrowConfig::validate() const {
    if (!(util_low >= 0 && util_low <= 1 && util_high >= 0 && util_high <= 1)) {
        throw ConfigError("borrow utilization thresholds must lie in [0,1]");
    }
    if (!(util_low < util_high)) throw ConfigError("borrow.util_low must be below borrow.util_high");
    if (min_free_kv_tokens < 0) throw ConfigError("borrow.min_free_kv_tokens must be >= 0");
}

void AutoscaleConfig::validate() const {
    if (!(check_interval > 0)) throw ConfigError("autoscale.check_interval must be positive");
    if (!(queue_delay_slo >= 0)) throw ConfigError("autoscale.queue_delay_slo must be >= 0");
    if (!(scale_in_threshold < scale_out_threshold)) {
        throw ConfigError("autoscale.scale_in_threshold must be below scale_out_threshold");
    }
    if (!(cooldown >= 0)) throw ConfigError("autoscale.cooldown must be >= 0");
    if (min_engines < 1 || min_engines > max_engines) {
        throw ConfigError("autoscale needs 1 <= min_engines <= max_engines");
    }
}

void PolicyConfig::validate() const {
    admission.validate();
    borrow.validate();
    autoscale.validate();
    if (!(estimate_weight > 0 && estimate_weight <= 1)) throw ConfigError("estimate_weight must lie in (0,1]");
}

bool Pool::accepts(StageIndex stage) const {
    return std::find(stage_ids.begin(), stage_ids.end(), stage) != stage_ids.end();
}

std::optional<std::size_t> select_next(const Pool& pool, double now, const KeyConfig& config) {
    std::optional<std::size_t> best;
    PriorityKey best_key;
    for (std::size_t i = 0; i < pool.queue.size(); ++i) {
        PriorityKey k = key_for(pool.queue[i], now, config);
        if (!best || precedes(k, best_key)) {
            best = i;
            best_key = k;
        }
    }
    return best;
}

std::vector<EngineId> serving_engines(const Pool& pool, std::span<const EngineState> engines) {
    std::vector<EngineId> out;
    for (EngineId id : pool.engines) {
        if (!engines[id].retired && !engines[id].lent_to) out.push_back(id);
    }
    for (const auto& e : engines) {
        if (!e.retired && e.lent_to == pool.id && !e.recalled) out.push_back(e.engine_id);
    }
    std::sort(out.begin(), out.end());
    return out;
}

namespace {
template <class Admissible>
std::optional<EngineId> pick_engine(const Pool& pool, const LlmCall& call, std::span<const EngineState> engines,
                                    Admissible admissible) {
    std::optional<EngineId> best;
    auto better = [&](const EngineState& a, const EngineState& b) {
        const bool wa = a.has_prefix(call.stage), wb = b.has_prefix(call.stage);
        if (wa != wb) return wa;
        if (a.kv_used_tokens != b.kv_used_tokens) return a.kv_used_tokens < b.kv_used_tokens;
        return a.engine_id < b.engine_id;
    };
    for (EngineId id : serving_engines(pool, engines)) {
        const auto& e = engines[id];
        if (!admissible(e)) continue;
        if (!best || better(e, engines[*best])) best = id;
    }
    return best;
}
}  // namespace

std::optional<EngineId> route_call(const Pool& pool, const LlmCall& call, const StageSpec& stage,
                                   std::span<const EngineState> engines) {
    return pick_engine(pool, call, engines, [&](const EngineState& e) { return can_admit(e, call, stage); });
}

std::optional<EngineId> route_with_eviction(const Pool& pool, const LlmCall& call, const StageSpec& stage,
                                            std::span<const EngineState> engines) {
    return pick_engine(pool, call, engines,
                       [&](const EngineState& e) { return can_admit_after_eviction(e, call, stage); });
}

Admission admission_decision(std::span<const Pool> pools) {
    for (const auto& p : pools) {
        if (p.admission.enabled && p.queue.size() >= p.admission.max_queue_len) return Admission::Reject;
    }
    return Admission::Accept;
}

namespace {
std::size_t unlent_engine_count(const Pool& pool, std::span<const EngineState> engines) {
    return static_cast<std::size_t>(std::count_if(pool.engines.begin(), pool.engines.end(), [&](EngineId id) {
        return !engines[id].retired && !engines[id].lent_to;
    }));
}

bool all_llm(const Pool& pool, const ValidatedWorkflow& workflow) {
    return std::all_of(pool.stage_ids.begin(), pool.stage_ids.end(),
                       [&](StageIndex s) { return workflow.stage(s).kind == StageKind::LlmCall; });
}
}  // namespace

std::optional<BorrowDecision> try_borrow(std::span<const Pool> pools, std::span<const EngineState> engines,
                                         std::span<const double> utilization, const ValidatedWorkflow& workflow) {
    const Pool* borrower = nullptr;
    for (const auto& p : pools) {
        if (p.kind != PoolKind::Llm || !p.borrow.enabled || !all_llm(p, workflow)) continue;
        if (p.queue.empty() || !(utilization[p.id] > p.borrow.util_high)) continue;
        if (!borrower || p.queue.size() > borrower->queue.size()) borrower = &p;
    }
    if (!borrower) return std::nullopt;

    std::int64_t borrower_prefix = 0;
    for (StageIndex s : borrower->stage_ids) {
        borrower_prefix = std::max(borrower_prefix, workflow.stage(s).prefix_tokens);
    }

    std::optional<BorrowDecision> best;
    double best_util = 0.0;
    for (const auto& lender : pools) {
        if (lender.id == borrower->id || lender.kind != PoolKind::Llm || !lender.borrow.enabled) continue;
        if (!(utilization[lender.id] < lender.borrow.util_low)) continue;
        // The lender keeps at least one engine of its own.
        if (unlent_engine_count(lender, engines) < 2) continue;
        for (EngineId id : lender.engines) {
            const auto& e = engines[id];
            if (e.retired || e.lent_to || !e.idle()) continue;
            if (e.free_kv_tokens() < lender.borrow.min_free_kv_tokens + borrower_prefix) continue;
            if (!best || utilization[lender.id] < best_util ||
                (utilization[lender.id] == best_util && id < best->engine)) {
                best = BorrowDecision{id, lender.id, borrower->id};
                best_util = utilization[lender.id];
            }
            break;
        }
    }
    return best;
}

void apply_borrow(const BorrowDecision& decision, std::span<EngineState> engines) {
    auto& e = engines[decision.engine];
    e.lent_to = decision.borrower;
    e.recalled = false;
}

bool return_borrowed(EngineState& engine, std::span<const Pool> pools, std::span<const double> utilization) {
    if (!engine.lent_to) return false;
    const Pool& home = pools[engine.home_pool];
    const Pool& borrower = pools[*engine.lent_to];
    const bool wanted = engine.recalled || utilization[home.id] > home.borrow.util_high ||
                        utilization[borrower.id] < borrower.borrow.util_low;
    if (!wanted) return false;
    if (!engine.idle()) {
        engine.recalled = true;
        return false;
    }
    std::vector<StageIndex> foreign;
    for (const auto& p : engine.resident_prefixes) {
        if (!home.accepts(p.stage)) foreign.push_back(p.stage);
    }
    for (StageIndex s : foreign) evict_idle_prefix(engine, s);
    engine.lent_to.reset();
    engine.recalled = false;
    return true;
}

ScaleDecision autoscale_tick(const Pool& pool, const WindowMetrics& window, double now) {
    const auto& cfg = pool.autoscale;
    if (!cfg.enabled) return ScaleDecision::Hold;
    if (now - pool.last_scale_time < cfg.cooldown) return ScaleDecision::Hold;
    const double fraction = window.violation_fraction();
    const auto units = static_cast<int>(window.units);
    if (fraction > cfg.scale_out_threshold && units < cfg.max_engines) return ScaleDecision::Out;
    if (fraction < cfg.scale_in_threshold && window.idle_units > 0 && units > cfg.min_engines) {
        return ScaleDecision::In;
    }
    return ScaleDecision::Hold;
}

}  // namespace cortex
