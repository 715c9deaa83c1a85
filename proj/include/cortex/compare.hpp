#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "cortex/config.hpp"
#include "cortex/metrics.hpp"

namespace cortex {

struct CellRun {
    std::string cell;
    std::uint64_t seed = 0;
    MetricsReport metrics;
};

struct Aggregate {
    double mean = 0.0;
    double min = 0.0;
    double max = 0.0;
};

struct WinLoss {
    int wins = 0;
    int losses = 0;
    int ties = 0;
};

/// Win/loss of `cell` against the first cell, per seed. Higher throughput
/// wins; lower p99 wins.
struct CellVersusBaseline {
    std::string cell;
    std::string baseline;
    WinLoss throughput;
    WinLoss p99;
};

struct ComparisonReport {
    std::vector<std::string> cells;
    std::vector<std::uint64_t> seeds;
    /// Cell-major, then seed order.
    std::vector<CellRun> runs;

    const CellRun& at(std::string_view cell, std::uint64_t seed) const;
    Aggregate aggregate(std::string_view cell, std::string_view metric) const;
    std::vector<CellVersusBaseline> versus_baseline() const;
};

/// Metric names reported per run, in output order.
const std::vector<std::string>& comparison_metrics();
double metric_value(const MetricsReport& m, std::string_view metric);

/// Throws ConfigError when there are fewer than two cells or LLM engine
/// totals differ between cells.
void check_fairness(const std::vector<Cell>& cells);

/// Runs every (cell, seed) pair; `threads` = 0 picks hardware concurrency.
ComparisonReport run_comparison(const std::vector<Cell>& cells, const std::vector<std::uint64_t>& seeds,
                                unsigned threads = 0);

void write_comparison_csv(std::ostream& os, const ComparisonReport& report);
nlohmann::json comparison_json(const ComparisonReport& report);
void print_aggregate_table(std::ostream& os, const ComparisonReport& report);

}  // namespace cortex
