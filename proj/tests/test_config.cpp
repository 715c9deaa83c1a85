#include <doctest.h>

#include <set>
#include <sstream>

#include <cortex/compare.hpp>
#include <cortex/config.hpp>
#include <cortex/errors.hpp>

using namespace cortex;
using nlohmann::json;

namespace {

std::string data(const char* name) { return std::string(CORTEX_TEST_DATA) + "/" + name; }

}  // namespace

TEST_CASE("presets load by name") {
    for (const auto& name : preset_names()) {
        CAPTURE(name);
        CHECK_NOTHROW(load_config(name));
    }
    const auto iso = load_config("nl2sql-isolated");
    CHECK(iso.base.topology.mode == PoolMode::Isolated);
    CHECK(iso.base.topology.engines_per_stage.at("generator") == 1);
    const auto sh = load_config("nl2sql-shared");
    CHECK(sh.base.topology.total_engines == 2);
    const auto cmp = load_config("nl2sql-compare");
    CHECK(cmp.cells.size() == 2);
    CHECK(cmp.seeds.size() == 10);
}

TEST_CASE("file overrides merge onto the preset") {
    const auto f = load_config(data("valid.json"));
    CHECK(f.base.duration == 60.0);
    CHECK(f.base.warmup == 10.0);
    CHECK(f.base.policy.admission.enabled);
    CHECK(f.base.policy.admission.max_queue_len == 32);
    CHECK(f.base.topology.engines_per_stage.at("fixer") == 1);
}

TEST_CASE("unknown keys are rejected") {
    CHECK_THROWS_AS(load_config(data("unknown_key.json")), ConfigError);
    json doc = preset_json("nl2sql-isolated");
    doc["policy"]["admission"]["max_queue"] = 3;
    CHECK_THROWS_AS(parse_config(doc), ConfigError);
    doc = preset_json("nl2sql-isolated");
    doc["topology"]["engine"]["kv"] = 3;
    CHECK_THROWS_AS(parse_config(doc), ConfigError);
    doc = preset_json("nl2sql-isolated");
    doc["preset"] = "nl2sql-nowhere";
    CHECK_THROWS_AS(parse_config(doc), ConfigError);
}

TEST_CASE("missing file") {
    CHECK_THROWS_AS(load_config("/nonexistent/cortex.json"), ConfigError);
}

TEST_CASE("inline workflow errors surface as WorkflowError") {
    try {
        load_config(data("mass09.json"));
        FAIL("accepted");
    } catch (const WorkflowError& e) {
        CHECK(e.kind() == WorkflowErrorKind::ProbabilityMassError);
        CHECK(std::string(e.what()).find("ProbabilityMassError") != std::string::npos);
    }
}

TEST_CASE("distribution forms") {
    CHECK(parse_distribution(json(3.5), "x").mean() == 3.5);
    CHECK(parse_distribution(json{{"constant", 2}}, "x").mean() == 2.0);
    CHECK(parse_distribution(json{{"uniform", {1, 3}}}, "x").mean() == doctest::Approx(2.0));
    CHECK(parse_distribution(json{{"uniform", {1, 3}}, {"scale", 4}}, "x").mean() == doctest::Approx(8.0));
    CHECK(parse_distribution(json{{"empirical", {1, 2, 6}}}, "x").mean() == doctest::Approx(3.0));
    const auto g = parse_distribution(json{{"geometric", {{"p", 0.5}, {"min", 1}, {"max", 1}}}}, "x");
    CHECK(g.mean() == doctest::Approx(1.0));
    CHECK_THROWS_AS(parse_distribution(json{{"uniform", {3, 1}}}, "x"), ConfigError);
    CHECK_THROWS_AS(parse_distribution(json{{"constant", 1}, {"uniform", {1, 2}}}, "x"), ConfigError);
    CHECK_THROWS_AS(parse_distribution(json{{"normal", 1}}, "x"), ConfigError);
    for (const auto& d : {Distribution::uniform(1, 2).scaled(3.0), Distribution::constant(4)}) {
        CHECK(parse_distribution(distribution_json(d), "x").mean() == doctest::Approx(d.mean()));
    }
}

TEST_CASE("seed lists") {
    CHECK(parse_seed_list("1..4") == std::vector<std::uint64_t>{1, 2, 3, 4});
    CHECK(parse_seed_list("7") == std::vector<std::uint64_t>{7});
    CHECK(parse_seed_list("3,9,2") == std::vector<std::uint64_t>{3, 9, 2});
    CHECK_THROWS_AS(parse_seed_list("5..2"), ConfigError);
    CHECK_THROWS_AS(parse_seed_list("a..b"), ConfigError);
}

TEST_CASE("fairness guard") {
    CHECK_THROWS_AS(check_fairness(load_config(data("unfair.json")).cells), ConfigError);
    CHECK_NOTHROW(check_fairness(load_config(data("compare.json")).cells));
    const auto f = load_config(data("compare.json"));
    CHECK_THROWS_AS(check_fairness({f.cells[0]}), ConfigError);
}

TEST_CASE("comparison covers every cell and seed once") {
    const auto f = load_config("nl2sql-compare");
    auto cells = f.cells;
    for (auto& c : cells) c.config.duration = 30.0, c.config.warmup = 5.0;
    const std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    const auto report = run_comparison(cells, seeds, 4);
    CHECK(report.runs.size() == 20);
    std::ostringstream os;
    write_comparison_csv(os, report);
    std::istringstream in(os.str());
    std::string line;
    std::getline(in, line);
    std::set<std::pair<std::string, std::string>> pairs;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        ++rows;
        const auto a = line.find(',');
        const auto b = line.find(',', a + 1);
        pairs.insert({line.substr(0, a), line.substr(a + 1, b - a - 1)});
    }
    CHECK(pairs.size() == 20);
    CHECK(rows == 20 * comparison_metrics().size());
    const auto j = comparison_json(report);
    CHECK(j["versus_baseline"].size() == 1);
    const auto& vs = j["versus_baseline"][0]["throughput"];
    CHECK(vs["wins"].get<int>() + vs["losses"].get<int>() + vs["ties"].get<int>() == 10);
}

TEST_CASE("single seed aggregates are flat") {
    auto cells = load_config("nl2sql-compare").cells;
    for (auto& c : cells) c.config.duration = 30.0, c.config.warmup = 5.0;
    const auto report = run_comparison(cells, {4}, 1);
    for (const auto& cell : report.cells) {
        for (const auto& m : comparison_metrics()) {
            const auto a = report.aggregate(cell, m);
            CHECK(a.min == a.mean);
            CHECK(a.max == a.mean);
        }
    }
}

TEST_CASE("comparison is independent of thread count") {
    auto cells = load_config("nl2sql-compare").cells;
    for (auto& c : cells) c.config.duration = 40.0, c.config.warmup = 5.0;
    std::ostringstream a, b;
    write_comparison_csv(a, run_comparison(cells, {1, 2, 3}, 1));
    write_comparison_csv(b, run_comparison(cells, {1, 2, 3}, 6));
    CHECK(a.str() == b.str());
}
