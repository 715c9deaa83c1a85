// cortex_sim: validate configs, run single simulations, compare cells across seeds.
//
// Exit codes: 0 ok, 2 config/validation error, 3 runtime invariant violation.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "cortex/compare.hpp"
#include "cortex/config.hpp"
#include "cortex/errors.hpp"
#include "cortex/simulator.hpp"
#include "cortex/trace.hpp"

namespace fs = std::filesystem;
using namespace cortex;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kInvariant = 3;

void write_file(const fs::path& path, auto&& writer) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot write " + path.string());
    writer(os);
    if (!os) throw ConfigError("write failed for " + path.string());
}

int cmd_validate(const std::string& path) {
    const RunConfigFile file = load_config(path);
    std::cout << "ok: " << file.base.workflow.name << ", " << file.cells.size() << " cell(s)\n";
    return kOk;
}

int cmd_run(const std::string& path, std::optional<std::uint64_t> seed, std::optional<std::string> out) {
    RunConfigFile file = load_config(path);
    if (seed) file.base.seed = *seed;
    const fs::path dir = out.value_or(file.output_dir);
    const SimResult result = run(file.base);
    fs::create_directories(dir);
    write_file(dir / "summary.json", [&](std::ostream& os) { os << to_json(result.metrics).dump(2) << '\n'; });
    write_file(dir / "kv_usage.csv", [&](std::ostream& os) { write_kv_usage_csv(os, result.traces); });
    write_file(dir / "dispatch.csv", [&](std::ostream& os) { write_dispatch_csv(os, result.traces); });
    write_file(dir / "requests.csv", [&](std::ostream& os) { write_requests_csv(os, result.traces); });
    std::cout << summary_line(result.metrics) << '\n';
    return kOk;
}

int cmd_compare(const std::string& path, std::optional<std::string> seeds_text, std::optional<std::string> out) {
    const RunConfigFile file = load_config(path);
    check_fairness(file.cells);
    const auto seeds = seeds_text ? parse_seed_list(*seeds_text) : file.seeds;
    const fs::path dir = out.value_or(file.output_dir);
    const ComparisonReport report = run_comparison(file.cells, seeds);
    fs::create_directories(dir);
    write_file(dir / "comparison.csv", [&](std::ostream& os) { write_comparison_csv(os, report); });
    write_file(dir / "comparison.json", [&](std::ostream& os) { os << comparison_json(report).dump(2) << '\n'; });
    print_aggregate_table(std::cout, report);
    return kOk;
}

int cmd_audit(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    const AuditResult result = audit_dispatch_log(in);
    for (const auto& m : result.messages) std::cout << m << '\n';
    std::cout << "audited " << result.dispatches << " dispatches, " << result.violations << " violation(s)\n";
    return result.ok() ? kOk : kInvariant;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Workflow-aware agentic serving simulator"};
    app.require_subcommand(1);

    std::string path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> seeds;

    auto* validate = app.add_subcommand("validate", "Check a config and its workflow graph");
    validate->add_option("config", path, "Config file or preset name")->required();

    auto* run_cmd = app.add_subcommand("run", "Run one simulation and write traces");
    run_cmd->add_option("config", path, "Config file or preset name")->required();
    run_cmd->add_option("--seed", seed, "Override the config seed");
    run_cmd->add_option("--out", out, "Output directory");

    auto* compare = app.add_subcommand("compare", "Run every cell for every seed");
    compare->add_option("config", path, "Config file or preset name")->required();
    compare->add_option("--seeds", seeds, "A..B or A,B,C (defaults to the config's seeds)");
    compare->add_option("--out", out, "Output directory");

    auto* audit = app.add_subcommand("audit", "Replay dispatch.csv and check priority order");
    audit->add_option("dispatch_csv", path, "Path to dispatch.csv")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        if (*validate) return cmd_validate(path);
        if (*run_cmd) return cmd_run(path, seed, out);
        if (*compare) return cmd_compare(path, seeds, out);
        if (*audit) return cmd_audit(path);
    } catch (const InvariantViolation& e) {
        std::cerr << e.what() << '\n';
        return kInvariant;
    } catch (const ConfigError& e) {
        std::cerr << e.what() << '\n';
        return kConfigError;
    } catch (const WorkflowError& e) {
        std::cerr << e.what() << '\n';
        return kConfigError;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "ConfigError: " << e.what() << '\n';
        return kConfigError;
    }
    return kConfigError;
}
