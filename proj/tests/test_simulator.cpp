#include <doctest.h>

#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include <cortex/errors.hpp>
#include <cortex/event_queue.hpp>
#include <cortex/metrics.hpp>
#include <cortex/simulator.hpp>
#include <cortex/trace.hpp>

#include "helpers.hpp"

using namespace cortex;

namespace {

std::string all_outputs(const SimResult& r) {
    std::ostringstream os;
    os << to_json(r.metrics).dump(2);
    write_kv_usage_csv(os, r.traces);
    write_dispatch_csv(os, r.traces);
    write_requests_csv(os, r.traces);
    return os.str();
}

SimConfig single_stage_sim(std::int64_t prefix) {
    SimConfig c;
    c.workflow = testing::single_stage(100.0);
    c.workflow.stages[0].prefix_tokens = prefix;
    c.topology.engines_per_stage = {{"only", 1}};
    c.arrival_rate = 0.01;
    c.duration = 2000.0;
    return c;
}

}  // namespace

TEST_CASE("percentile is nearest rank") {
    std::vector<double> v(100);
    std::iota(v.begin(), v.end(), 1.0);
    CHECK(percentile(v, 99) == 99.0);
    CHECK(percentile(v, 100) == 100.0);
    CHECK(percentile(v, 1) == 1.0);
    const std::vector<double> one = {5.0};
    for (double q : {0.1, 50.0, 100.0}) CHECK(percentile(one, q) == 5.0);
    const std::vector<double> three = {3.0, 1.0, 2.0};
    CHECK(percentile(three, 50) == 2.0);
    CHECK_THROWS_AS(percentile(std::vector<double>{}, 50), EmptySamples);
}

TEST_CASE("interarrival by inverse CDF") {
    CHECK(interarrival_from_uniform(std::exp(-1.0), 1.0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(interarrival_from_uniform(1.0, 7.0) == 0.0);
    auto rng = RngStreams(9).stream("arrivals");
    double sum = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) sum += sample_interarrival(rng, 2.0);
    CHECK(std::abs(sum / n - 0.5) / 0.5 < 0.01);
}

TEST_CASE("event queue orders by time then scheduling order") {
    EventQueue q;
    q.push(2.0, EventKind::Arrival, 0, 0);
    q.push(1.0, EventKind::ToolComplete, 1, 0);
    q.push(1.0, EventKind::Arrival, 2, 0);
    CHECK(q.pop().target == 1);
    CHECK(q.pop().target == 2);
    CHECK(q.pop().time == 2.0);
    CHECK(q.empty());
    CHECK_THROWS(q.push(1.0, EventKind::Arrival, 0, 0));
}

TEST_CASE("uncontended single-stage latency is prefill plus decode") {
    // prompt 100, output 50, prefill 5000 tok/s, t0 0.02
    const auto r = run(single_stage_sim(500));
    REQUIRE(r.traces.requests.size() >= 5);
    const auto& reqs = r.traces.requests;
    int isolated_checked = 0;
    for (std::size_t i = 0; i < reqs.size(); ++i) {
        const bool overlaps = (i > 0 && reqs[i - 1].done > reqs[i].arrival) ||
                              (i + 1 < reqs.size() && reqs[i + 1].arrival < reqs[i].done);
        if (overlaps) continue;
        const double cold = i == 0 ? 500.0 / 5000.0 : 0.0;
        CHECK(reqs[i].latency == doctest::Approx(100.0 / 5000.0 + cold + 50 * 0.02).epsilon(1e-9));
        ++isolated_checked;
    }
    CHECK(isolated_checked >= 5);
}

TEST_CASE("no arrivals gives an empty report") {
    auto cfg = testing::nl2sql_sim(PoolMode::Isolated, 1e-9, 10.0);
    const auto r = run(cfg);
    CHECK(r.metrics.arrivals == 0);
    CHECK(r.metrics.completed == 0);
    CHECK(r.metrics.throughput == 0.0);
    CHECK(r.metrics.latency_p99 == 0.0);
    CHECK(r.metrics.conserved());
}

TEST_CASE("duration equal to warmup measures nothing") {
    auto cfg = testing::nl2sql_sim(PoolMode::Isolated, 1.0, 0.0);
    cfg.warmup = 0.0;
    const auto r = run(cfg);
    CHECK(r.metrics.arrivals == 0);
    CHECK(r.metrics.throughput == 0.0);
}

TEST_CASE("bad configs are rejected") {
    auto cfg = testing::nl2sql_sim(PoolMode::Isolated);
    SUBCASE("warmup beyond duration") {
        cfg.warmup = cfg.duration + 1;
        CHECK_THROWS_AS(run(cfg), ConfigError);
    }
    SUBCASE("zero rate") {
        cfg.arrival_rate = 0.0;
        CHECK_THROWS_AS(run(cfg), ConfigError);
    }
    SUBCASE("bad workflow") {
        cfg.workflow.stages[1].outcomes[0].probability = 0.1;
        CHECK_THROWS_AS(run(cfg), WorkflowError);
    }
}

TEST_CASE("runs are deterministic") {
    auto cfg = testing::nl2sql_sim(PoolMode::Shared, 1.2, 90.0);
    cfg.seed = 42;
    CHECK(all_outputs(run(cfg)) == all_outputs(run(cfg)));
    auto other = cfg;
    other.seed = 43;
    CHECK(all_outputs(run(cfg)) != all_outputs(run(other)));
}

TEST_CASE("isolated and shared see the same workload") {
    const auto iso = run(testing::nl2sql_sim(PoolMode::Isolated, 0.8, 200.0));
    const auto sh = run(testing::nl2sql_sim(PoolMode::Shared, 0.8, 200.0));
    CHECK(iso.metrics.arrivals == sh.metrics.arrivals);
    std::map<std::uint64_t, const RequestRecord*> by_id;
    for (const auto& r : sh.traces.requests) by_id[r.request] = &r;
    int compared = 0;
    for (const auto& r : iso.traces.requests) {
        auto it = by_id.find(r.request);
        if (it == by_id.end()) continue;
        CHECK(it->second->arrival == r.arrival);
        CHECK(it->second->outcome == r.outcome);
        ++compared;
    }
    CHECK(compared > 100);
}

TEST_CASE("changing the fixer's output tokens leaves arrivals and outcomes alone") {
    auto base = testing::nl2sql_sim(PoolMode::Isolated, 0.5, 200.0);
    auto slow = base;
    Nl2SqlParams p;
    p.fixer_output_tokens = p.fixer_output_tokens.scaled(3.0);
    slow.workflow = build_nl2sql(p);
    const auto a = run(base);
    const auto b = run(slow);
    std::map<std::uint64_t, RequestOutcome> outcomes;
    for (const auto& r : a.traces.requests) outcomes[r.request] = r.outcome;
    for (const auto& r : b.traces.requests) {
        if (outcomes.count(r.request)) CHECK(outcomes[r.request] == r.outcome);
    }
    CHECK(a.metrics.arrivals == b.metrics.arrivals);
}

TEST_CASE("conservation and capacity hold across policies and topologies") {
    for (auto mode : {PoolMode::Isolated, PoolMode::Shared}) {
        for (auto kind : {PolicyKind::Fcfs, PolicyKind::WorkflowAgnosticPriority, PolicyKind::CortexFull}) {
            for (double rate : {0.5, 1.5, 3.0}) {
                auto cfg = testing::nl2sql_sim(mode, rate, 100.0);
                cfg.policy.kind = kind;
                cfg.topology.engine.kv_capacity_tokens = 3000;
                cfg.seed = static_cast<std::uint64_t>(rate * 10) + static_cast<std::uint64_t>(kind);
                const auto r = run(cfg);
                CHECK(r.metrics.conserved());
                for (const auto& s : r.traces.kv) REQUIRE(s.kv_used_tokens <= 3000);
                std::istringstream csv([&] {
                    std::ostringstream os;
                    write_dispatch_csv(os, r.traces);
                    return os.str();
                }());
                CHECK(audit_dispatch_log(csv).ok());
            }
        }
    }
}

TEST_CASE("warmup excludes early requests from latency") {
    auto cfg = testing::nl2sql_sim(PoolMode::Isolated, 1.0, 100.0);
    cfg.warmup = 50.0;
    const auto r = run(cfg);
    std::size_t measured = 0;
    for (const auto& q : r.traces.requests) measured += q.arrival >= 50.0 ? 1 : 0;
    CHECK(r.metrics.measured_completed + r.metrics.measured_failed == measured);
    CHECK(r.metrics.throughput == doctest::Approx(r.metrics.measured_completed / 50.0));
}

TEST_CASE("online estimates keep the audit exact") {
    auto cfg = testing::nl2sql_sim(PoolMode::Isolated, 1.5, 100.0);
    cfg.policy.online_estimates = true;
    cfg.policy.use_selectivity = true;
    const auto r = run(cfg);
    std::ostringstream os;
    write_dispatch_csv(os, r.traces);
    std::istringstream in(os.str());
    const auto audit = audit_dispatch_log(in);
    CHECK(audit.dispatches > 0);
    CHECK(audit.ok());
}

TEST_CASE("audit catches a reordered dispatch") {
    const std::string csv =
        "time,pool,request,slack,expected_service,engine,event,stage,policy,key_seq,selectivity,deadline,"
        "remaining_work,attained\n"
        "0.000000000,gen,1,5.000000000,1.000000000,,enqueue,generator,cortex,1,,10.000000000,5.000000000,0.000000000\n"
        "0.000000000,gen,2,1.000000000,1.000000000,,enqueue,generator,cortex,2,,6.000000000,5.000000000,0.000000000\n"
        "1.000000000,gen,1,4.000000000,1.000000000,0,dispatch,generator,cortex,1,,10.000000000,5.000000000,0.000000000\n";
    std::istringstream in(csv);
    const auto audit = audit_dispatch_log(in);
    CHECK(audit.violations == 1);
}

TEST_CASE("baseline policies audit cleanly with selectivity switched on") {
    for (auto kind : {PolicyKind::Fcfs, PolicyKind::WorkflowAgnosticPriority}) {
        auto cfg = testing::nl2sql_sim(PoolMode::Shared, 1.8, 150.0);
        cfg.policy.kind = kind;
        cfg.policy.use_selectivity = true;
        cfg.policy.online_estimates = true;
        cfg.topology.engine.kv_capacity_tokens = 3200;
        const auto r = run(cfg);
        std::ostringstream os;
        write_dispatch_csv(os, r.traces);
        std::istringstream in(os.str());
        CHECK(audit_dispatch_log(in).ok());
    }
}
