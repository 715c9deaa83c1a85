#include "cortex/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <set>

#include "cortex/event_queue.hpp"

namespace cortex {

double interarrival_from_uniform(double u, double rate) { return -std::log(u) / rate; }

double sample_interarrival(RngStream& rng, double rate) {
    return interarrival_from_uniform(rng.uniform_pos(), rate);
}

void SimConfig::validate() const {
    if (!(arrival_rate > 0) || !std::isfinite(arrival_rate)) throw ConfigError("arrivals.rate must be positive");
    if (!(warmup >= 0) || !std::isfinite(duration) || duration < warmup) {
        throw ConfigError("need duration >= warmup >= 0");
    }
    if (!(kv_sample_interval >= 0)) throw ConfigError("trace.kv_sample_interval must be >= 0");
    policy.validate();
    topology.engine.validate();
    const auto wf = validate_workflow(workflow);
    build_topology(topology, wf);
    for (const auto& [id, value] : service_estimates) {
        if (!wf.find(id)) throw ConfigError("service estimate for unknown stage '" + id + "'");
        if (!(value >= 0) || !std::isfinite(value)) throw ConfigError("service estimate for '" + id + "' must be >= 0");
    }
}

namespace {

enum class Status { Active, Completed, Failed, Rejected };

struct RequestSlot {
    RequestState state;
    std::vector<std::uint64_t> visits;  // per stage
    double attained = 0.0;
    double stage_start = 0.0;
    Status status = Status::Active;
};

ServiceEstimates merged_estimates(const ValidatedWorkflow& wf, const SimConfig& cfg) {
    ServiceEstimates e = default_service_estimates(wf, cfg.topology.engine);
    for (const auto& [id, v] : cfg.service_estimates) e[id] = v;
    return e;
}

class Simulation {
public:
    explicit Simulation(const SimConfig& cfg)
        : cfg_(cfg),
          wf_(validate_workflow(cfg.workflow)),
          estimates_(merged_estimates(wf_, cfg)),
          work_(wf_, estimates_),
          rng_(cfg.seed),
          arrivals_(rng_.stream("arrivals")),
          keys_(cfg.policy.key_config()) {
        const PoolLayout layout = build_topology(cfg.topology, wf_);
        stage_pool_.assign(wf_.stage_count(), 0);
        for (const auto& spec : layout.pools) {
            Pool p;
            p.id = pools_.size();
            p.name = spec.name;
            p.kind = spec.kind;
            p.stage_ids = spec.stages;
            p.admission = cfg.policy.admission;
            p.borrow = cfg.policy.borrow;
            p.autoscale = cfg.policy.autoscale;
            if (spec.kind == PoolKind::Llm) {
                for (int i = 0; i < spec.engine_count; ++i) p.engines.push_back(add_engine(p.id, 0.0));
            } else {
                p.tool_concurrency = spec.concurrency;
            }
            for (StageIndex s : spec.stages) stage_pool_[s] = p.id;
            traces_.pool_names.push_back(p.name);
            pools_.push_back(std::move(p));
        }
        for (StageIndex s = 0; s < wf_.stage_count(); ++s) traces_.stage_names.push_back(wf_.stage(s).id);
        traces_.policy = cfg.policy.kind;

        const std::size_t n = pools_.size();
        pool_stats_.resize(n);
        window_dispatches_.assign(n, 0);
        window_delayed_.assign(n, 0);
        tool_busy_seconds_.assign(n, 0.0);
        tool_busy_baseline_.assign(n, 0.0);
        dirty_.assign(n, false);
    }

    SimResult run() {
        const double first = sample_interarrival(arrivals_, cfg_.arrival_rate);
        if (first <= cfg_.duration) events_.push(first, EventKind::Arrival);
        const double interval = cfg_.policy.autoscale.check_interval;
        if ((cfg_.policy.autoscale.enabled || cfg_.policy.borrow.enabled) && interval <= cfg_.duration) {
            events_.push(interval, EventKind::AutoscaleTick);
            events_.push(interval, EventKind::BorrowCheck);
        }
        if (cfg_.kv_sample_interval > 0 && cfg_.kv_sample_interval <= cfg_.duration) {
            events_.push(cfg_.kv_sample_interval, EventKind::KvSample);
        }

        while (!events_.empty() && events_.top().time <= cfg_.duration) {
            const Event ev = events_.pop();
            now_ = ev.time;
            advance_all();
            handle(ev);
            for (PoolId p = 0; p < pools_.size(); ++p) {
                if (dirty_[p]) dispatch(p);
            }
            check_invariants();
            ++events_processed_;
        }
        now_ = cfg_.duration;
        advance_all();
        return finish();
    }

private:
    // ---- setup helpers ----------------------------------------------------

    EngineId add_engine(PoolId home, double now) {
        EngineState e;
        e.engine_id = engines_.size();
        e.params = cfg_.topology.engine;
        e.home_pool = home;
        e.last_advanced = now;
        e.started_at = now;
        engines_.push_back(e);
        busy_baseline_.push_back(0.0);
        retired_at_.push_back(std::numeric_limits<double>::quiet_NaN());
        max_kv_sampled_.push_back(0);
        return e.engine_id;
    }

    void advance_all() {
        for (auto& e : engines_) {
            if (!e.retired) advance_to(e, now_);
        }
        for (PoolId p = 0; p < pools_.size(); ++p) {
            tool_busy_seconds_[p] += static_cast<double>(pools_[p].tool_busy) * (now_ - last_tool_time_);
        }
        last_tool_time_ = now_;
    }

    bool measured(const RequestSlot& r) const { return r.state.arrival_time >= cfg_.warmup; }

    // ---- event handlers ----------------------------------------------------

    void handle(const Event& ev) {
        switch (ev.kind) {
            case EventKind::Arrival: on_arrival(); break;
            case EventKind::PrefillDone: on_prefill_done(ev.target, ev.token); break;
            case EventKind::CallComplete: on_call_complete(ev.target, ev.token); break;
            case EventKind::ToolComplete: on_tool_complete(ev.target, ev.token); break;
            case EventKind::AutoscaleTick: on_autoscale_tick(); break;
            case EventKind::BorrowCheck: on_borrow_check(); break;
            case EventKind::KvSample: on_kv_sample(); break;
        }
    }

    void on_arrival() {
        const std::uint64_t id = requests_.size();
        RequestSlot slot;
        slot.state = wf_.start_request(id, now_);
        slot.visits.assign(wf_.stage_count(), 0);
        ++arrivals_count_;

        const double next = now_ + sample_interarrival(arrivals_, cfg_.arrival_rate);
        if (next <= cfg_.duration) events_.push(next, EventKind::Arrival);

        if (admission_decision(pools_) == Admission::Reject) {
            slot.status = Status::Rejected;
            ++rejected_;
            requests_.push_back(std::move(slot));
            return;
        }
        ++admitted_;
        ++active_;
        requests_.push_back(std::move(slot));
        enqueue(requests_.back());
    }

    void enqueue(RequestSlot& r) {
        const StageIndex s = r.state.stage();
        const auto& stage = wf_.stage(s);
        const std::uint64_t visit = r.visits[s]++;
        const std::uint64_t id = r.state.request_id;

        PendingCall call;
        call.request_id = id;
        call.arrival_seq = id;
        call.enqueue_seq = enqueue_seq_++;
        call.stage = s;
        call.retries_used = r.state.retries_used;
        call.enqueue_time = now_;
        call.deadline = r.state.deadline;
        call.remaining_work = work_.at(s, r.state.retries_used);
        call.expected_service = work_.estimate(s);
        call.selectivity = wf_.selectivity(s);
        call.attained_service = r.attained;
        if (stage.kind == StageKind::LlmCall) {
            auto prompt = rng_.substream("prompt:" + stage.id, id, visit);
            auto output = rng_.substream("output:" + stage.id, id, visit);
            call.prompt_tokens = std::llround(stage.prompt_tokens->sample(prompt));
            call.output_tokens = std::llround(stage.output_tokens->sample(output));
        } else {
            auto tool = rng_.substream("tool:" + stage.id, id, visit);
            call.tool_service = stage.service_time->sample(tool);
        }

        Pool& pool = pools_[stage_pool_[s]];
        pool.queue.push_back(call);
        dirty_[pool.id] = true;
        auto& stats = pool_stats_[pool.id];
        stats.max_queue_len = std::max(stats.max_queue_len, pool.queue.size());
        record_queue_event(pool.id, call, QueueEvent::Enqueue, std::nullopt);
    }

    void record_queue_event(PoolId pool, const PendingCall& call, QueueEvent event, std::optional<EngineId> engine) {
        const PriorityKey key = key_for(call, now_, keys_);
        DispatchRecord rec;
        rec.time = now_;
        rec.pool = pool;
        rec.request = call.request_id;
        rec.event = event;
        rec.stage = call.stage;
        rec.slack = key.slack;
        rec.expected_service = key.expected_stage_service;
        rec.selectivity = key.selectivity;
        rec.key_seq = key.arrival_seq;
        rec.deadline = call.deadline;
        rec.remaining_work = call.remaining_work;
        rec.attained = call.attained_service;
        rec.engine = engine;
        traces_.dispatch.push_back(rec);
    }

    // Strict priority: the head call either dispatches or blocks the queue.
    void dispatch(PoolId pid) {
        dirty_[pid] = false;
        Pool& pool = pools_[pid];
        while (auto idx = select_next(pool, now_, keys_)) {
            const PendingCall call = pool.queue[*idx];
            std::optional<EngineId> engine;
            if (pool.kind == PoolKind::Llm) {
                const auto& stage = wf_.stage(call.stage);
                const LlmCall llm = call.llm_call();
                engine = route_call(pool, llm, stage, engines_);
                if (!engine) {
                    engine = route_with_eviction(pool, llm, stage, engines_);
                    if (engine && !make_room(engines_[*engine], llm, stage)) engine.reset();
                }
                if (!engine) break;
                EngineState& e = engines_[*engine];
                const double prefill_done = admit(e, llm, stage, now_);
                events_.push(prefill_done, EventKind::PrefillDone, *engine, call.request_id);
                if (e.lent_to) {
                    std::set<StageIndex> stages;
                    for (const auto& c : e.active_batch) stages.insert(c.stage);
                    if (stages.size() > 1) ++lent_mixed_batches_;
                }
            } else {
                if (pool.tool_busy >= pool.tool_concurrency) break;
                ++pool.tool_busy;
                events_.push(now_ + call.tool_service, EventKind::ToolComplete, pid, call.request_id);
            }

            record_queue_event(pid, call, QueueEvent::Dispatch, engine);
            const double delay = now_ - call.enqueue_time;
            ++window_dispatches_[pid];
            if (delay > pool.autoscale.queue_delay_slo) ++window_delayed_[pid];
            if (now_ >= cfg_.warmup) {
                ++pool_stats_[pid].dispatches;
                pool_stats_[pid].delay_sum += delay;
            }
            requests_[call.request_id].stage_start = now_;
            pool.queue.erase(pool.queue.begin() + static_cast<std::ptrdiff_t>(*idx));
        }
    }

    void schedule_completion(EngineId id) {
        const EngineState& e = engines_[id];
        if (auto next = next_completion(e, now_)) {
            events_.push(next->completes_at, EventKind::CallComplete, id, e.version);
        }
    }

    void on_prefill_done(EngineId id, std::uint64_t request) {
        EngineState& e = engines_[id];
        begin_decode(e, request);
        if (e.find_call(request)->target_output_tokens == 0) {
            complete_llm_call(id, request);
        }
        schedule_completion(id);
    }

    void on_call_complete(EngineId id, std::uint64_t version) {
        EngineState& e = engines_[id];
        if (e.retired || version != e.version) return;  // superseded by a batch change
        const auto next = next_completion(e, now_);
        if (!next) return;
        complete_llm_call(id, next->request_id);
        schedule_completion(id);
    }

    void complete_llm_call(EngineId id, std::uint64_t request) {
        EngineState& e = engines_[id];
        const InFlightCall done = finish_call(e, request, now_);
        const double observed = now_ - done.admitted_at;
        dirty_[e.lent_to ? *e.lent_to : e.home_pool] = true;
        if (e.recalled && e.idle()) send_home(e);
        finish_stage(requests_[request], done.stage, observed);
    }

    void on_tool_complete(PoolId pid, std::uint64_t request) {
        Pool& pool = pools_[pid];
        --pool.tool_busy;
        dirty_[pid] = true;
        RequestSlot& r = requests_[request];
        finish_stage(r, r.state.stage(), now_ - r.stage_start);
    }

    void finish_stage(RequestSlot& r, StageIndex stage, double service) {
        const std::uint64_t visit = r.visits[stage] - 1;
        auto draw = rng_.substream("outcome:" + wf_.stage(stage).id, r.state.request_id, visit);
        const auto& edge = wf_.edges(stage)[wf_.pick_outcome(stage, draw.uniform())];

        r.attained += service;
        r.state.stage_history.push_back({stage, r.stage_start, now_, edge.label});
        if (cfg_.policy.online_estimates) update_estimate(stage, service);

        StepResult step = next_step(r.state, edge.label, wf_);
        r.state.current = step.state.current;
        r.state.retries_used = step.state.retries_used;
        if (std::holds_alternative<Advance>(step.transition)) {
            enqueue(r);
        } else {
            finish_request(r, std::get<Done>(step.transition).terminal);
        }
    }

    void update_estimate(StageIndex stage, double observed) {
        const double w = cfg_.policy.estimate_weight;
        double& est = estimates_[wf_.stage(stage).id];
        est = (1.0 - w) * est + w * observed;
        work_ = RemainingWorkTable(wf_, estimates_);
    }

    void finish_request(RequestSlot& r, Terminal terminal) {
        r.status = terminal == Terminal::Success ? Status::Completed : Status::Failed;
        --active_;
        const double latency = now_ - r.state.arrival_time;
        const bool violated = latency > wf_.slo_seconds();
        if (terminal == Terminal::Success) {
            ++completed_;
        } else {
            ++failed_;
        }
        if (measured(r)) {
            if (terminal == Terminal::Success) {
                ++measured_completed_;
                latencies_.push_back(latency);
            } else {
                ++measured_failed_;
            }
            if (violated) ++measured_violations_;
        }
        traces_.requests.push_back({r.state.request_id, r.state.arrival_time, now_,
                                    terminal == Terminal::Success ? RequestOutcome::Success : RequestOutcome::Failure,
                                    latency, violated});
    }

    // ---- control plane ------------------------------------------------------

    void on_autoscale_tick() {
        const double next = now_ + cfg_.policy.autoscale.check_interval;
        if (next <= cfg_.duration) events_.push(next, EventKind::AutoscaleTick);

        for (PoolId pid = 0; pid < pools_.size(); ++pid) {
            Pool& pool = pools_[pid];
            WindowMetrics w;
            w.dispatches = window_dispatches_[pid];
            w.delayed = window_delayed_[pid];
            std::vector<EngineId> idle;
            if (pool.kind == PoolKind::Llm) {
                for (EngineId id : pool.engines) {
                    const auto& e = engines_[id];
                    if (e.retired) continue;
                    ++w.units;
                    if (!e.lent_to && e.idle()) idle.push_back(id);
                }
                w.idle_units = idle.size();
            } else {
                w.units = static_cast<std::size_t>(pool.tool_concurrency);
                w.idle_units = static_cast<std::size_t>(pool.tool_concurrency - pool.tool_busy);
            }
            window_dispatches_[pid] = 0;
            window_delayed_[pid] = 0;

            const ScaleDecision d = autoscale_tick(pool, w, now_);
            if (d == ScaleDecision::Hold) continue;
            pool.last_scale_time = now_;
            dirty_[pid] = true;
            if (d == ScaleDecision::Out) {
                ++pool_stats_[pid].scale_outs;
                if (pool.kind == PoolKind::Llm) {
                    pool.engines.push_back(add_engine(pid, now_));
                } else {
                    ++pool.tool_concurrency;
                }
            } else {
                ++pool_stats_[pid].scale_ins;
                if (pool.kind == PoolKind::Llm) {
                    const EngineId victim = idle.back();
                    EngineState& e = engines_[victim];
                    e.retired = true;
                    retired_at_[victim] = now_;
                    pool.engines.erase(std::find(pool.engines.begin(), pool.engines.end(), victim));
                } else {
                    --pool.tool_concurrency;
                }
            }
        }
    }

    std::vector<double> window_utilization() const {
        const double span = now_ - window_start_;
        std::vector<double> util(pools_.size(), 0.0);
        for (const auto& pool : pools_) {
            if (pool.kind == PoolKind::Tool) {
                const double cap = static_cast<double>(pool.tool_concurrency) * span;
                util[pool.id] = cap > 0 ? (tool_busy_seconds_[pool.id] - tool_busy_baseline_[pool.id]) / cap : 0.0;
                continue;
            }
            const auto serving = serving_engines(pool, engines_);
            if (serving.empty() || span <= 0) {
                util[pool.id] = pool.queue.empty() ? 0.0 : 1.0;
                continue;
            }
            double busy = 0.0;
            for (EngineId id : serving) busy += engines_[id].busy_seconds - busy_baseline_[id];
            util[pool.id] = std::clamp(busy / (static_cast<double>(serving.size()) * span), 0.0, 1.0);
        }
        return util;
    }

    void send_home(EngineState& e) {
        const PoolId borrower = *e.lent_to;
        const std::vector<double> util(pools_.size(), 0.0);
        if (return_borrowed(e, pools_, util)) {
            ++returns_;
            dirty_[e.home_pool] = true;
            dirty_[borrower] = true;
        }
    }

    void on_borrow_check() {
        const double next = now_ + cfg_.policy.autoscale.check_interval;
        if (next <= cfg_.duration) events_.push(next, EventKind::BorrowCheck);

        const auto util = window_utilization();
        if (cfg_.policy.borrow.enabled) {
            for (auto& e : engines_) {
                if (e.retired || !e.lent_to) continue;
                const PoolId borrower = *e.lent_to;
                if (return_borrowed(e, pools_, util)) {
                    ++returns_;
                    dirty_[e.home_pool] = true;
                    dirty_[borrower] = true;
                }
            }
            if (auto d = try_borrow(pools_, engines_, util, wf_)) {
                apply_borrow(*d, engines_);
                ++borrows_;
                ++pool_stats_[d->borrower].borrowed_engines;
                dirty_[d->borrower] = true;
            }
        }
        for (const auto& e : engines_) busy_baseline_[e.engine_id] = e.busy_seconds;
        tool_busy_baseline_ = tool_busy_seconds_;
        window_start_ = now_;
    }

    void on_kv_sample() {
        const double next = now_ + cfg_.kv_sample_interval;
        if (next <= cfg_.duration) events_.push(next, EventKind::KvSample);
        for (const auto& e : engines_) {
            if (e.retired) continue;
            traces_.kv.push_back({now_, e.lent_to ? *e.lent_to : e.home_pool, e.engine_id, e.kv_used_tokens,
                                  e.resident_prefix_tokens()});
            max_kv_sampled_[e.engine_id] = std::max(max_kv_sampled_[e.engine_id], e.kv_used_tokens);
        }
    }

    void check_invariants() const {
        for (const auto& e : engines_) {
            if (!e.retired) check_engine_invariants(e);
        }
        for (const auto& pool : pools_) {
            for (const auto& c : pool.queue) {
                if (!pool.accepts(c.stage)) {
                    throw InvariantViolation("pool " + pool.name + " holds a call of a foreign stage");
                }
            }
            if (pool.tool_busy < 0 || pool.tool_busy > pool.tool_concurrency) {
                throw InvariantViolation("tool occupancy out of range in pool " + pool.name);
            }
        }
        if (admitted_ != completed_ + failed_ + active_) {
            throw InvariantViolation("request conservation broken");
        }
    }

    SimResult finish() {
        SimResult out;
        MetricsReport& m = out.metrics;
        m.arrivals = arrivals_count_;
        m.arrivals_admitted = admitted_;
        m.rejected = rejected_;
        m.completed = completed_;
        m.failed_budget = failed_;
        m.in_flight_at_end = active_;
        m.measured_completed = measured_completed_;
        m.measured_failed = measured_failed_;
        if (!latencies_.empty()) {
            m.latency_p50 = percentile(latencies_, 50);
            m.latency_p95 = percentile(latencies_, 95);
            m.latency_p99 = percentile(latencies_, 99);
        }
        const double window = cfg_.duration - cfg_.warmup;
        m.throughput = window > 0 ? static_cast<double>(measured_completed_) / window : 0.0;
        const std::size_t finished = measured_completed_ + measured_failed_;
        m.slo_violation_rate =
            finished ? static_cast<double>(measured_violations_) / static_cast<double>(finished) : 0.0;
        m.borrows = borrows_;
        m.returns = returns_;
        m.lent_mixed_batches = lent_mixed_batches_;
        m.events_processed = events_processed_;

        for (const auto& pool : pools_) {
            const auto& s = pool_stats_[pool.id];
            PoolMetrics pm;
            pm.name = pool.name;
            pm.dispatches = s.dispatches;
            pm.mean_queue_delay = s.dispatches ? s.delay_sum / static_cast<double>(s.dispatches) : 0.0;
            pm.max_queue_len = s.max_queue_len;
            pm.final_queue_len = pool.queue.size();
            pm.scale_outs = s.scale_outs;
            pm.scale_ins = s.scale_ins;
            pm.borrowed_engines = s.borrowed_engines;
            pm.final_units = pool.kind == PoolKind::Tool
                                 ? pool.tool_concurrency
                                 : static_cast<int>(std::count_if(pool.engines.begin(), pool.engines.end(),
                                                                  [&](EngineId id) { return !engines_[id].retired; }));
            m.pools.push_back(pm);
        }
        for (const auto& e : engines_) {
            EngineMetrics em;
            em.engine = e.engine_id;
            em.home_pool = pools_[e.home_pool].name;
            const double end = e.retired ? retired_at_[e.engine_id] : cfg_.duration;
            const double life = end - e.started_at;
            em.mean_kv_used = life > 0 ? e.kv_token_seconds / life : 0.0;
            em.busy_fraction = life > 0 ? e.busy_seconds / life : 0.0;
            em.max_kv_sampled = max_kv_sampled_[e.engine_id];
            em.kv_capacity = e.params.kv_capacity_tokens;
            m.engines.push_back(em);
        }
        out.traces = std::move(traces_);
        return out;
    }

    struct PoolStats {
        std::size_t dispatches = 0;
        double delay_sum = 0.0;
        std::size_t max_queue_len = 0;
        int scale_outs = 0;
        int scale_ins = 0;
        int borrowed_engines = 0;
    };

    SimConfig cfg_;
    ValidatedWorkflow wf_;
    ServiceEstimates estimates_;
    RemainingWorkTable work_;
    RngStreams rng_;
    RngStream arrivals_;
    KeyConfig keys_;

    EventQueue events_;
    double now_ = 0.0;
    std::vector<Pool> pools_;
    std::vector<EngineState> engines_;
    std::vector<PoolId> stage_pool_;
    std::vector<RequestSlot> requests_;
    std::vector<bool> dirty_;
    std::uint64_t enqueue_seq_ = 0;

    std::vector<std::size_t> window_dispatches_;
    std::vector<std::size_t> window_delayed_;
    std::vector<double> busy_baseline_;
    std::vector<double> tool_busy_seconds_;
    std::vector<double> tool_busy_baseline_;
    double last_tool_time_ = 0.0;
    double window_start_ = 0.0;
    std::vector<double> retired_at_;
    std::vector<std::int64_t> max_kv_sampled_;

    std::vector<PoolStats> pool_stats_;
    std::vector<double> latencies_;
    std::size_t arrivals_count_ = 0;
    std::size_t admitted_ = 0;
    std::size_t active_ = 0;
    std::size_t rejected_ = 0;
    std::size_t completed_ = 0;
    std::size_t failed_ = 0;
    std::size_t measured_completed_ = 0;
    std::size_t measured_failed_ = 0;
    std::size_t measured_violations_ = 0;
    std::size_t borrows_ = 0;
    std::size_t returns_ = 0;
    std::size_t lent_mixed_batches_ = 0;
    std::size_t events_processed_ = 0;
    Traces traces_;
};

}  // namespace

SimResult run(const SimConfig& config) {
    config.validate();
    return Simulation(config).run();
}

}  // namespace cortex
