#include "cortex/trace.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

namespace cortex {

std::string format_seconds(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9f", x);
    if (std::string_view(buf) == "-0.000000000") return "0.000000000";
    return buf;
}

void write_kv_usage_csv(std::ostream& os, const Traces& t) {
    os << "time,pool,engine,kv_used_tokens,resident_prefix_tokens\n";
    for (const auto& s : t.kv) {
        os << format_seconds(s.time) << ',' << t.pool_names.at(s.pool) << ',' << s.engine << ',' << s.kv_used_tokens
           << ',' << s.resident_prefix_tokens << '\n';
    }
}

void write_dispatch_csv(std::ostream& os, const Traces& t) {
    os << "time,pool,request,slack,expected_service,engine,event,stage,policy,key_seq,selectivity,deadline,"
          "remaining_work,attained\n";
    const std::string policy(to_string(t.policy));
    for (const auto& r : t.dispatch) {
        os << format_seconds(r.time) << ',' << t.pool_names.at(r.pool) << ',' << r.request << ','
           << format_seconds(r.slack) << ',' << format_seconds(r.expected_service) << ',';
        if (r.engine) os << *r.engine;
        os << ',' << (r.event == QueueEvent::Enqueue ? "enqueue" : "dispatch") << ',' << t.stage_names.at(r.stage)
           << ',' << policy << ',' << r.key_seq << ',';
        if (r.selectivity) os << format_seconds(*r.selectivity);
        os << ',' << format_seconds(r.deadline) << ',' << format_seconds(r.remaining_work) << ','
           << format_seconds(r.attained) << '\n';
    }
}

void write_requests_csv(std::ostream& os, const Traces& t) {
    os << "request,arrival,done,outcome,latency,violated_slo\n";
    for (const auto& r : t.requests) {
        os << r.request << ',' << format_seconds(r.arrival) << ',' << format_seconds(r.done) << ','
           << (r.outcome == RequestOutcome::Success ? "success" : "failure") << ',' << format_seconds(r.latency)
           << ',' << (r.violated_slo ? 1 : 0) << '\n';
    }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

struct QueuedKey {
    std::uint64_t request;
    std::string policy;
    double slack_at_enqueue;
    double enqueue_time;
    double deadline;
    double remaining;
    double expected_service;
    std::optional<double> selectivity;
    std::uint64_t key_seq;

    // Key at time t; only the cortex slack moves while a call waits.
    double primary(double t) const { return policy == "cortex" ? deadline - t - remaining : slack_at_enqueue; }
};

enum class Cmp { Less, Greater, Ambiguous };

Cmp compare_field(double a, double b, double tol) {
    if (a < b - tol) return Cmp::Less;
    if (a > b + tol) return Cmp::Greater;
    return Cmp::Ambiguous;
}

// True only when `other` is unambiguously ahead of `chosen` at time t.
bool strictly_ahead(const QueuedKey& other, const QueuedKey& chosen, double t, double tol) {
    auto decide = [](Cmp c, bool& decided) {
        decided = c != Cmp::Ambiguous;
        return c == Cmp::Less;
    };
    bool decided = false;
    const double po = other.primary(t), pc = chosen.primary(t);
    bool ahead = decide(compare_field(po, pc, tol), decided);
    if (decided) return ahead;
    if (po != pc) return false;  // unresolvable at printed precision
    ahead = decide(compare_field(other.expected_service, chosen.expected_service, tol), decided);
    if (decided) return ahead;
    if (other.expected_service != chosen.expected_service) return false;
    if (other.selectivity && chosen.selectivity) {
        // Higher selectivity goes first.
        ahead = decide(compare_field(*chosen.selectivity, *other.selectivity, tol), decided);
        if (decided) return ahead;
        if (*other.selectivity != *chosen.selectivity) return false;
    }
    return other.key_seq < chosen.key_seq;
}

}  // namespace

AuditResult audit_dispatch_log(std::istream& csv, double tolerance) {
    AuditResult result;
    std::string line;
    if (!std::getline(csv, line)) return result;
    const auto header = split_csv_line(line);
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
    for (const char* required : {"time", "pool", "request", "slack", "expected_service", "event", "policy", "key_seq",
                                 "selectivity", "deadline", "remaining_work"}) {
        if (!col.count(required)) throw std::runtime_error(std::string("dispatch log lacks column ") + required);
    }

    std::map<std::string, std::map<std::uint64_t, QueuedKey>> queues;
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        const double t = std::stod(f.at(col["time"]));
        const std::string& pool = f.at(col["pool"]);
        const std::uint64_t request = std::stoull(f.at(col["request"]));
        auto& queue = queues[pool];
        if (f.at(col["event"]) == "enqueue") {
            ++result.enqueues;
            QueuedKey k;
            k.request = request;
            k.policy = f.at(col["policy"]);
            k.slack_at_enqueue = std::stod(f.at(col["slack"]));
            k.enqueue_time = t;
            k.deadline = std::stod(f.at(col["deadline"]));
            k.remaining = std::stod(f.at(col["remaining_work"]));
            k.expected_service = std::stod(f.at(col["expected_service"]));
            if (!f.at(col["selectivity"]).empty()) k.selectivity = std::stod(f.at(col["selectivity"]));
            k.key_seq = std::stoull(f.at(col["key_seq"]));
            queue[request] = k;
            continue;
        }
        ++result.dispatches;
        auto it = queue.find(request);
        if (it == queue.end()) {
            ++result.violations;
            if (result.messages.size() < 10) {
                result.messages.push_back("request " + std::to_string(request) + " dispatched from " + pool +
                                          " without being queued");
            }
            continue;
        }
        const QueuedKey chosen = it->second;
        queue.erase(it);
        for (const auto& [id, other] : queue) {
            if (strictly_ahead(other, chosen, t, tolerance)) {
                ++result.violations;
                if (result.messages.size() < 10) {
                    result.messages.push_back("t=" + format_seconds(t) + " pool " + pool + ": request " +
                                              std::to_string(request) + " dispatched ahead of " + std::to_string(id));
                }
                break;
            }
        }
    }
    return result;
}

}  // namespace cortex
