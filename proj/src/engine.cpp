#include "cortex/engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace cortex {

namespace {
// Absorbs floating error when fractional progress lands on a whole token.
constexpr double kTokenEpsilon = 1e-7;
}  // namespace

void EngineParams::validate() const {
    if (kv_capacity_tokens <= 0) throw ConfigError("kv_capacity_tokens must be positive");
    if (!(prefill_rate > 0)) throw ConfigError("prefill_rate must be positive");
    if (!(base_token_time > 0)) throw ConfigError("base_token_time must be positive");
    if (!(batch_slope >= 0)) throw ConfigError("batch_slope must be >= 0");
    if (max_batch < 1) throw ConfigError("max_batch must be >= 1");
}

std::int64_t InFlightCall::generated_tokens() const {
    auto whole = static_cast<std::int64_t>(std::floor(tokens_emitted + kTokenEpsilon));
    return std::clamp<std::int64_t>(whole, 0, target_output_tokens);
}

bool EngineState::has_prefix(StageIndex stage) const { return prefix(stage) != nullptr; }

const ResidentPrefix* EngineState::prefix(StageIndex stage) const {
    for (const auto& p : resident_prefixes) {
        if (p.stage == stage) return &p;
    }
    return nullptr;
}

std::int64_t EngineState::resident_prefix_tokens() const {
    std::int64_t total = 0;
    for (const auto& p : resident_prefixes) total += p.tokens;
    return total;
}

std::size_t EngineState::decode_batch_size() const {
    return static_cast<std::size_t>(std::count_if(active_batch.begin(), active_batch.end(), [](const auto& c) {
        return c.phase == CallPhase::Decode;
    }));
}

std::int64_t EngineState::kv_committed_tokens() const {
    std::int64_t total = resident_prefix_tokens();
    for (const auto& c : active_batch) total += c.prompt_tokens + c.target_output_tokens;
    return total;
}

bool EngineState::serves_stage(StageIndex stage) const {
    return std::any_of(active_batch.begin(), active_batch.end(), [stage](const auto& c) { return c.stage == stage; });
}

const InFlightCall* EngineState::find_call(std::uint64_t request_id) const {
    for (const auto& c : active_batch) {
        if (c.request_id == request_id) return &c;
    }
    return nullptr;
}

std::int64_t kv_demand(const LlmCall& call, const EngineState& engine, const StageSpec& stage) {
    std::int64_t demand = call.prompt_tokens + call.output_tokens;
    if (!engine.has_prefix(call.stage)) demand += stage.prefix_tokens;
    return demand;
}

bool can_admit(const EngineState& engine, const LlmCall& call, const StageSpec& stage) {
    if (engine.retired) return false;
    if (engine.active_batch.size() >= static_cast<std::size_t>(engine.params.max_batch)) return false;
    return engine.kv_committed_tokens() + kv_demand(call, engine, stage) <= engine.params.kv_capacity_tokens;
}

double admit(EngineState& engine, const LlmCall& call, const StageSpec& stage, double now) {
    if (!can_admit(engine, call, stage)) {
        throw AdmitWithoutCapacity("engine " + std::to_string(engine.engine_id) + " cannot admit request " +
                                   std::to_string(call.request_id));
    }
    std::int64_t cold_tokens = 0;
    auto it = std::find_if(engine.resident_prefixes.begin(), engine.resident_prefixes.end(),
                           [&](const auto& p) { return p.stage == call.stage; });
    if (it == engine.resident_prefixes.end()) {
        cold_tokens = stage.prefix_tokens;
        engine.resident_prefixes.push_back({call.stage, stage.prefix_tokens, now});
        engine.kv_used_tokens += stage.prefix_tokens;
    } else {
        it->last_used = now;
    }
    InFlightCall in_flight;
    in_flight.request_id = call.request_id;
    in_flight.stage = call.stage;
    in_flight.prompt_tokens = call.prompt_tokens;
    in_flight.target_output_tokens = call.output_tokens;
    in_flight.admitted_at = now;
    engine.active_batch.push_back(in_flight);
    engine.kv_used_tokens += call.prompt_tokens;
    return now + static_cast<double>(call.prompt_tokens + cold_tokens) / engine.params.prefill_rate;
}

void advance_decode(EngineState& engine, double from, double to) {
    if (to < from) {
        throw InvariantViolation("advance_decode asked to move backwards on engine " +
                                 std::to_string(engine.engine_id));
    }
    const double dt = to - from;
    const std::int64_t kv_before = engine.kv_used_tokens;
    if (!engine.active_batch.empty()) engine.busy_seconds += dt;

    const std::size_t b = engine.decode_batch_size();
    if (b > 0 && dt > 0) {
        const double progress = dt / engine.params.token_time(b);
        for (auto& c : engine.active_batch) {
            if (c.phase != CallPhase::Decode) continue;
            const std::int64_t before = c.generated_tokens();
            c.tokens_emitted = std::min(c.tokens_emitted + progress, static_cast<double>(c.target_output_tokens));
            engine.kv_used_tokens += c.generated_tokens() - before;
        }
    }
    // KV grows linearly between whole tokens; trapezoid is close enough for a mean.
    engine.kv_token_seconds += 0.5 * static_cast<double>(kv_before + engine.kv_used_tokens) * dt;
    engine.last_advanced = to;
}

void advance_to(EngineState& engine, double now) { advance_decode(engine, engine.last_advanced, now); }

std::optional<Completion> next_completion(const EngineState& engine, double now) {
    const std::size_t b = engine.decode_batch_size();
    if (b == 0) return std::nullopt;
    const InFlightCall* best = nullptr;
    for (const auto& c : engine.active_batch) {
        if (c.phase != CallPhase::Decode) continue;
        if (!best || c.remaining_tokens() < best->remaining_tokens() ||
            (c.remaining_tokens() == best->remaining_tokens() && c.request_id < best->request_id)) {
            best = &c;
        }
    }
    const double remaining = std::max(0.0, best->remaining_tokens());
    return Completion{best->request_id, now + remaining * engine.params.token_time(b)};
}

void begin_decode(EngineState& engine, std::uint64_t request_id) {
    for (auto& c : engine.active_batch) {
        if (c.request_id == request_id) {
            c.phase = CallPhase::Decode;
            ++engine.version;
            return;
        }
    }
    throw InvariantViolation("prefill finished for request " + std::to_string(request_id) +
                             " not on engine " + std::to_string(engine.engine_id));
}

InFlightCall finish_call(EngineState& engine, std::uint64_t request_id, double now) {
    auto it = std::find_if(engine.active_batch.begin(), engine.active_batch.end(),
                           [&](const auto& c) { return c.request_id == request_id; });
    if (it == engine.active_batch.end()) {
        throw InvariantViolation("request " + std::to_string(request_id) + " not on engine " +
                                 std::to_string(engine.engine_id));
    }
    const double slack = std::max(1e-6, 1e-9 * static_cast<double>(it->target_output_tokens));
    if (it->remaining_tokens() > slack) {
        throw InvariantViolation("request " + std::to_string(request_id) + " completed with " +
                                 std::to_string(it->remaining_tokens()) + " tokens outstanding");
    }
    const std::int64_t before = it->generated_tokens();
    it->tokens_emitted = static_cast<double>(it->target_output_tokens);
    engine.kv_used_tokens += it->generated_tokens() - before;

    InFlightCall done = *it;
    engine.kv_used_tokens -= done.prompt_tokens + done.generated_tokens();
    engine.active_batch.erase(it);
    for (auto& p : engine.resident_prefixes) {
        if (p.stage == done.stage) p.last_used = now;
    }
    ++engine.version;
    return done;
}

void evict_idle_prefix(EngineState& engine, StageIndex stage) {
    auto it = std::find_if(engine.resident_prefixes.begin(), engine.resident_prefixes.end(),
                           [&](const auto& p) { return p.stage == stage; });
    if (it == engine.resident_prefixes.end()) return;
    if (engine.serves_stage(stage)) {
        throw PrefixInUse("engine " + std::to_string(engine.engine_id) + " still serves the prefix's stage");
    }
    engine.kv_used_tokens -= it->tokens;
    engine.resident_prefixes.erase(it);
}

namespace {
// Idle prefixes other than `keep`, least recently used first.
std::vector<ResidentPrefix> eviction_candidates(const EngineState& engine, StageIndex keep) {
    std::vector<ResidentPrefix> out;
    for (const auto& p : engine.resident_prefixes) {
        if (p.stage != keep && !engine.serves_stage(p.stage)) out.push_back(p);
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        return a.last_used != b.last_used ? a.last_used < b.last_used : a.stage < b.stage;
    });
    return out;
}
}  // namespace

bool can_admit_after_eviction(const EngineState& engine, const LlmCall& call, const StageSpec& stage) {
    if (engine.retired || engine.active_batch.size() >= static_cast<std::size_t>(engine.params.max_batch)) {
        return false;
    }
    std::int64_t reclaimable = 0;
    for (const auto& p : eviction_candidates(engine, call.stage)) reclaimable += p.tokens;
    return engine.kv_committed_tokens() - reclaimable + kv_demand(call, engine, stage) <=
           engine.params.kv_capacity_tokens;
}

bool make_room(EngineState& engine, const LlmCall& call, const StageSpec& stage) {
    if (!can_admit_after_eviction(engine, call, stage)) return false;
    for (const auto& p : eviction_candidates(engine, call.stage)) {
        if (can_admit(engine, call, stage)) break;
        evict_idle_prefix(engine, p.stage);
    }
    return can_admit(engine, call, stage);
}

std::int64_t recompute_kv_used(const EngineState& engine) {
    std::int64_t total = engine.resident_prefix_tokens();
    for (const auto& c : engine.active_batch) total += c.prompt_tokens + c.generated_tokens();
    return total;
}

void check_engine_invariants(const EngineState& engine) {
    const std::string id = "engine " + std::to_string(engine.engine_id);
    if (recompute_kv_used(engine) != engine.kv_used_tokens) {
        throw InvariantViolation(id + " kv accounting drifted: tracked " + std::to_string(engine.kv_used_tokens) +
                                 " vs recomputed " + std::to_string(recompute_kv_used(engine)));
    }
    if (engine.kv_used_tokens > engine.params.kv_capacity_tokens) {
        throw InvariantViolation(id + " kv_used " + std::to_string(engine.kv_used_tokens) + " exceeds capacity " +
                                 std::to_string(engine.params.kv_capacity_tokens));
    }
    if (engine.active_batch.size() > static_cast<std::size_t>(engine.params.max_batch)) {
        throw InvariantViolation(id + " batch exceeds max_batch");
    }
    for (const auto& c : engine.active_batch) {
        if (c.tokens_emitted > static_cast<double>(c.target_output_tokens) + kTokenEpsilon) {
            throw InvariantViolation(id + " call emitted past its target");
        }
    }
}

double tool_service_time(const ToolPoolParams& params, RngStream& rng) { return params.service_time.sample(rng); }

}  // namespace cortex
