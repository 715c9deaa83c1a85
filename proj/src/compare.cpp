#include "cortex/compare.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <thread>

#include "cortex/errors.hpp"
#include "cortex/simulator.hpp"
#include "cortex/trace.hpp"

namespace cortex {

namespace {

int llm_engines(const SimConfig& c) {
    const ValidatedWorkflow wf = validate_workflow(c.workflow);
    return build_topology(c.topology, wf).llm_engine_total();
}

double total_mean_kv(const MetricsReport& m) {
    double sum = 0.0;
    for (const auto& e : m.engines) sum += e.mean_kv_used;
    return sum;
}

void tally(WinLoss& wl, double ours, double theirs, bool higher_better) {
    if (ours == theirs) {
        ++wl.ties;
    } else if ((ours > theirs) == higher_better) {
        ++wl.wins;
    } else {
        ++wl.losses;
    }
}

}  // namespace

const std::vector<std::string>& comparison_metrics() {
    static const std::vector<std::string> names = {
        "arrivals",    "completed",   "failed_budget", "rejected",           "in_flight_at_end",
        "throughput",  "latency_p50", "latency_p95",   "latency_p99",        "slo_violation_rate",
        "borrows",     "total_mean_kv_used"};
    return names;
}

double metric_value(const MetricsReport& m, std::string_view metric) {
    if (metric == "arrivals") return static_cast<double>(m.arrivals);
    if (metric == "completed") return static_cast<double>(m.completed);
    if (metric == "failed_budget") return static_cast<double>(m.failed_budget);
    if (metric == "rejected") return static_cast<double>(m.rejected);
    if (metric == "in_flight_at_end") return static_cast<double>(m.in_flight_at_end);
    if (metric == "throughput") return m.throughput;
    if (metric == "latency_p50") return m.latency_p50;
    if (metric == "latency_p95") return m.latency_p95;
    if (metric == "latency_p99") return m.latency_p99;
    if (metric == "slo_violation_rate") return m.slo_violation_rate;
    if (metric == "borrows") return static_cast<double>(m.borrows);
    if (metric == "total_mean_kv_used") return total_mean_kv(m);
    throw std::invalid_argument("unknown metric " + std::string(metric));
}

const CellRun& ComparisonReport::at(std::string_view cell, std::uint64_t seed) const {
    for (const auto& r : runs) {
        if (r.cell == cell && r.seed == seed) return r;
    }
    throw std::out_of_range("no run for cell " + std::string(cell));
}

Aggregate ComparisonReport::aggregate(std::string_view cell, std::string_view metric) const {
    Aggregate a;
    int n = 0;
    for (const auto& r : runs) {
        if (r.cell != cell) continue;
        const double v = metric_value(r.metrics, metric);
        if (n == 0) {
            a.min = a.max = v;
        } else {
            a.min = std::min(a.min, v);
            a.max = std::max(a.max, v);
        }
        a.mean += v;
        ++n;
    }
    if (n > 0) a.mean /= n;
    // Keeps min == mean == max exact for a single seed.
    if (n == 1) a.mean = a.min;
    return a;
}

std::vector<CellVersusBaseline> ComparisonReport::versus_baseline() const {
    std::vector<CellVersusBaseline> out;
    if (cells.empty()) return out;
    for (std::size_t c = 1; c < cells.size(); ++c) {
        CellVersusBaseline v{cells[c], cells[0], {}, {}};
        for (auto seed : seeds) {
            const auto& ours = at(cells[c], seed).metrics;
            const auto& base = at(cells[0], seed).metrics;
            tally(v.throughput, fixed9(ours.throughput), fixed9(base.throughput), true);
            tally(v.p99, fixed9(ours.latency_p99), fixed9(base.latency_p99), false);
        }
        out.push_back(v);
    }
    return out;
}

void check_fairness(const std::vector<Cell>& cells) {
    if (cells.size() < 2) throw ConfigError("compare needs at least two cells");
    const int first = llm_engines(cells.front().config);
    for (const auto& c : cells) {
        const int n = llm_engines(c.config);
        if (n != first) {
            throw ConfigError("fairness guard: cell '" + c.name + "' has " + std::to_string(n) +
                              " LLM engines but '" + cells.front().name + "' has " + std::to_string(first));
        }
    }
}

ComparisonReport run_comparison(const std::vector<Cell>& cells, const std::vector<std::uint64_t>& seeds,
                                unsigned threads) {
    ComparisonReport report;
    for (const auto& c : cells) report.cells.push_back(c.name);
    report.seeds = seeds;
    report.runs.resize(cells.size() * seeds.size());

    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = std::min<unsigned>(threads, static_cast<unsigned>(report.runs.size()));

    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(report.runs.size());
    auto worker = [&] {
        for (std::size_t i = next++; i < report.runs.size(); i = next++) {
            const auto& cell = cells[i / seeds.size()];
            const auto seed = seeds[i % seeds.size()];
            try {
                SimConfig cfg = cell.config;
                cfg.seed = seed;
                report.runs[i] = CellRun{cell.name, seed, run(cfg).metrics};
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return report;
}

void write_comparison_csv(std::ostream& os, const ComparisonReport& report) {
    os << "cell,seed,metric,value\n";
    for (const auto& r : report.runs) {
        for (const auto& metric : comparison_metrics()) {
            os << r.cell << ',' << r.seed << ',' << metric << ',' << format_seconds(metric_value(r.metrics, metric))
               << '\n';
        }
    }
}

nlohmann::json comparison_json(const ComparisonReport& report) {
    using nlohmann::json;
    json j;
    j["cells"] = report.cells;
    j["seeds"] = report.seeds;
    json runs = json::array();
    for (const auto& r : report.runs) runs.push_back({{"cell", r.cell}, {"seed", r.seed}, {"metrics", to_json(r.metrics)}});
    j["runs"] = runs;
    json agg = json::object();
    for (const auto& cell : report.cells) {
        json per = json::object();
        for (const auto& metric : comparison_metrics()) {
            const auto a = report.aggregate(cell, metric);
            per[metric] = {{"mean", fixed9(a.mean)}, {"min", fixed9(a.min)}, {"max", fixed9(a.max)}};
        }
        agg[cell] = per;
    }
    j["aggregate"] = agg;
    json vs = json::array();
    for (const auto& v : report.versus_baseline()) {
        auto wl = [](const WinLoss& w) { return json{{"wins", w.wins}, {"losses", w.losses}, {"ties", w.ties}}; };
        vs.push_back({{"cell", v.cell}, {"baseline", v.baseline}, {"throughput", wl(v.throughput)}, {"latency_p99", wl(v.p99)}});
    }
    j["versus_baseline"] = vs;
    return j;
}

void print_aggregate_table(std::ostream& os, const ComparisonReport& report) {
    char line[256];
    std::snprintf(line, sizeof line, "%-16s %-20s %16s %16s %16s\n", "cell", "metric", "mean", "min", "max");
    os << line;
    for (const auto& cell : report.cells) {
        for (const auto& metric : comparison_metrics()) {
            const auto a = report.aggregate(cell, metric);
            std::snprintf(line, sizeof line, "%-16s %-20s %16.6f %16.6f %16.6f\n", cell.c_str(), metric.c_str(),
                          a.mean, a.min, a.max);
            os << line;
        }
    }
    for (const auto& v : report.versus_baseline()) {
        std::snprintf(line, sizeof line, "%s vs %s: throughput %d-%d-%d, p99 %d-%d-%d (win-loss-tie)\n",
                      v.cell.c_str(), v.baseline.c_str(), v.throughput.wins, v.throughput.losses, v.throughput.ties,
                      v.p99.wins, v.p99.losses, v.p99.ties);
        os << line;
    }
}

}  // namespace cortex
