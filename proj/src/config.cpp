#include "cortex/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "cortex/errors.hpp"

namespace cortex {

using nlohmann::json;

namespace {

/// Reads an object's keys and rejects anything it was not asked about.
class Keys {
public:
    Keys(const json& obj, std::string where) : obj_(obj), where_(std::move(where)) {
        if (!obj_.is_object()) throw ConfigError(where_ + " must be an object");
    }
    ~Keys() = default;

    bool has(const std::string& key) {
        seen_.insert(key);
        return obj_.contains(key);
    }

    const json& at(const std::string& key) {
        seen_.insert(key);
        if (!obj_.contains(key)) throw ConfigError(path(key) + " is required");
        return obj_.at(key);
    }

    template <class T>
    T get(const std::string& key) {
        const json& v = at(key);
        try {
            return v.get<T>();
        } catch (const json::exception&) {
            throw ConfigError(path(key) + " has the wrong type");
        }
    }

    template <class T>
    void read(const std::string& key, T& out) {
        if (has(key)) out = get<T>(key);
    }

    std::string path(const std::string& key) const { return where_ + "." + key; }

    void finish() const {
        for (const auto& [k, v] : obj_.items()) {
            if (!seen_.count(k)) throw ConfigError("unknown key " + path(k));
        }
    }

private:
    const json& obj_;
    std::string where_;
    std::set<std::string> seen_;
};

StageKind parse_kind(const std::string& s, const std::string& where) {
    if (s == "llm") return StageKind::LlmCall;
    if (s == "tool") return StageKind::ToolCall;
    throw ConfigError(where + " must be \"llm\" or \"tool\"");
}

PolicyKind parse_policy_kind(const std::string& s) {
    if (s == "cortex") return PolicyKind::CortexFull;
    if (s == "fcfs") return PolicyKind::Fcfs;
    if (s == "las") return PolicyKind::WorkflowAgnosticPriority;
    throw ConfigError("policy.kind must be one of cortex, fcfs, las");
}

Nl2SqlParams parse_nl2sql(const json& j) {
    Nl2SqlParams p;
    Keys k(j, "workflow.nl2sql");
    k.read("p_syntax_error", p.p_syntax_error);
    k.read("p_empty_result", p.p_empty_result);
    k.read("retry_budget", p.retry_budget);
    k.read("generator_prefix_tokens", p.generator_prefix_tokens);
    k.read("fixer_prefix_tokens", p.fixer_prefix_tokens);
    k.read("slo_seconds", p.slo_seconds);
    auto dist = [&](const char* key, Distribution& out) {
        if (k.has(key)) out = parse_distribution(k.at(key), k.path(key));
    };
    dist("generator_prompt_tokens", p.generator_prompt_tokens);
    dist("generator_output_tokens", p.generator_output_tokens);
    dist("fixer_prompt_tokens", p.fixer_prompt_tokens);
    dist("fixer_output_tokens", p.fixer_output_tokens);
    dist("executor_service_time", p.executor_service_time);
    k.finish();
    return p;
}

WorkflowSpec parse_inline_workflow(const json& j) {
    WorkflowSpec w;
    Keys k(j, "workflow.inline");
    k.read("name", w.name);
    w.entry_stage = k.get<std::string>("entry_stage");
    k.read("retry_budget", w.retry_budget);
    w.slo_seconds = k.get<double>("slo_seconds");
    const json& stages = k.at("stages");
    if (!stages.is_array()) throw ConfigError("workflow.inline.stages must be an array");
    for (std::size_t i = 0; i < stages.size(); ++i) {
        const std::string where = "workflow.inline.stages[" + std::to_string(i) + "]";
        Keys sk(stages[i], where);
        StageSpec s;
        s.id = sk.get<std::string>("id");
        s.kind = parse_kind(sk.get<std::string>("kind"), sk.path("kind"));
        sk.read("prefix_tokens", s.prefix_tokens);
        if (sk.has("prompt_tokens")) s.prompt_tokens = parse_distribution(sk.at("prompt_tokens"), sk.path("prompt_tokens"));
        if (sk.has("output_tokens")) s.output_tokens = parse_distribution(sk.at("output_tokens"), sk.path("output_tokens"));
        if (sk.has("service_time")) s.service_time = parse_distribution(sk.at("service_time"), sk.path("service_time"));
        const json& outcomes = sk.at("outcomes");
        if (!outcomes.is_array()) throw ConfigError(sk.path("outcomes") + " must be an array");
        for (std::size_t o = 0; o < outcomes.size(); ++o) {
            Keys ok(outcomes[o], sk.path("outcomes") + "[" + std::to_string(o) + "]");
            Outcome out;
            out.label = ok.get<std::string>("label");
            out.probability = ok.get<double>("probability");
            out.target = ok.get<std::string>("target");
            ok.read("counts_retry", out.counts_retry);
            ok.finish();
            s.outcomes.push_back(out);
        }
        sk.finish();
        w.stages.push_back(std::move(s));
    }
    k.finish();
    return w;
}

WorkflowSpec parse_workflow(const json& j) {
    Keys k(j, "workflow");
    WorkflowSpec w;
    const bool nl2sql = k.has("nl2sql");
    const bool inline_spec = k.has("inline");
    if (nl2sql == inline_spec) throw ConfigError("workflow needs exactly one of nl2sql or inline");
    w = nl2sql ? build_nl2sql(parse_nl2sql(k.at("nl2sql"))) : parse_inline_workflow(k.at("inline"));
    k.finish();
    return w;
}

TopologyPreset parse_topology(const json& j) {
    TopologyPreset t;
    Keys k(j, "topology");
    const auto mode = k.get<std::string>("mode");
    if (mode == "isolated") {
        t.mode = PoolMode::Isolated;
    } else if (mode == "shared") {
        t.mode = PoolMode::Shared;
    } else {
        throw ConfigError("topology.mode must be isolated or shared");
    }
    if (k.has("engines")) {
        for (const auto& [stage, count] : k.at("engines").items()) t.engines_per_stage[stage] = count.get<int>();
    }
    k.read("total_engines", t.total_engines);
    if (k.has("engine")) {
        Keys e(k.at("engine"), "topology.engine");
        e.read("kv_capacity_tokens", t.engine.kv_capacity_tokens);
        e.read("prefill_rate", t.engine.prefill_rate);
        e.read("base_token_time", t.engine.base_token_time);
        e.read("batch_slope", t.engine.batch_slope);
        e.read("max_batch", t.engine.max_batch);
        e.finish();
    }
    if (k.has("tools")) {
        for (const auto& [stage, count] : k.at("tools").items()) t.tool_concurrency[stage] = count.get<int>();
    }
    k.finish();
    return t;
}

PolicyConfig parse_policy(const json& j) {
    PolicyConfig p;
    Keys k(j, "policy");
    if (k.has("kind")) p.kind = parse_policy_kind(k.get<std::string>("kind"));
    k.read("selectivity", p.use_selectivity);
    k.read("online_estimates", p.online_estimates);
    k.read("estimate_weight", p.estimate_weight);
    if (k.has("admission")) {
        Keys a(k.at("admission"), "policy.admission");
        a.read("enabled", p.admission.enabled);
        a.read("max_queue_len", p.admission.max_queue_len);
        if (a.has("action") && a.get<std::string>("action") != "reject_new_workflows") {
            throw ConfigError("policy.admission.action must be reject_new_workflows");
        }
        a.finish();
    }
    if (k.has("borrow")) {
        Keys b(k.at("borrow"), "policy.borrow");
        b.read("enabled", p.borrow.enabled);
        b.read("util_low", p.borrow.util_low);
        b.read("util_high", p.borrow.util_high);
        b.read("min_free_kv_tokens", p.borrow.min_free_kv_tokens);
        b.finish();
    }
    if (k.has("autoscale")) {
        Keys a(k.at("autoscale"), "policy.autoscale");
        a.read("enabled", p.autoscale.enabled);
        a.read("check_interval", p.autoscale.check_interval);
        a.read("queue_delay_slo", p.autoscale.queue_delay_slo);
        a.read("scale_out_threshold", p.autoscale.scale_out_threshold);
        a.read("scale_in_threshold", p.autoscale.scale_in_threshold);
        a.read("cooldown", p.autoscale.cooldown);
        a.read("min_engines", p.autoscale.min_engines);
        a.read("max_engines", p.autoscale.max_engines);
        a.finish();
    }
    k.finish();
    return p;
}

// Everything except cells/seeds/output_dir/preset, which only the file level understands.
SimConfig parse_sim(const json& doc) {
    SimConfig c;
    Keys k(doc, "config");
    c.workflow = parse_workflow(k.at("workflow"));
    c.topology = parse_topology(k.at("topology"));
    if (k.has("policy")) c.policy = parse_policy(k.at("policy"));
    {
        Keys a(k.at("arrivals"), "arrivals");
        c.arrival_rate = a.get<double>("rate");
        if (a.has("process") && a.get<std::string>("process") != "poisson") {
            throw ConfigError("arrivals.process must be poisson");
        }
        a.finish();
    }
    c.duration = k.get<double>("duration");
    k.read("warmup", c.warmup);
    k.read("seed", c.seed);
    if (k.has("service_estimates")) {
        for (const auto& [stage, v] : k.at("service_estimates").items()) c.service_estimates[stage] = v.get<double>();
    }
    if (k.has("trace")) {
        Keys t(k.at("trace"), "trace");
        t.read("kv_sample_interval", c.kv_sample_interval);
        t.finish();
    }
    // File-level keys are handled by parse_config.
    for (const char* key : {"seeds", "output_dir", "cells", "preset", "name"}) k.has(key);
    k.finish();
    c.validate();
    return c;
}

json resolve_preset(const json& doc) {
    if (!doc.is_object()) throw ConfigError("config must be a JSON object");
    if (!doc.contains("preset")) return doc;
    if (!doc.at("preset").is_string()) throw ConfigError("preset must be a string");
    json merged = preset_json(doc.at("preset").get<std::string>());
    json overlay = doc;
    overlay.erase("preset");
    merged.merge_patch(overlay);
    return merged;
}

json nl2sql_defaults() {
    return json{{"nl2sql", json::object()}};
}

json engine_defaults() {
    EngineParams e;
    return json{{"kv_capacity_tokens", e.kv_capacity_tokens},
                {"prefill_rate", e.prefill_rate},
                {"base_token_time", e.base_token_time},
                {"batch_slope", e.batch_slope},
                {"max_batch", e.max_batch}};
}

json common_preset() {
    return json{{"workflow", nl2sql_defaults()},
                {"policy", {{"kind", "cortex"}}},
                {"arrivals", {{"rate", 1.0}}},
                {"duration", 300.0},
                {"warmup", 30.0},
                {"seed", 1}};
}

}  // namespace

std::vector<std::string> preset_names() { return {"nl2sql-isolated", "nl2sql-shared", "nl2sql-compare"}; }

bool is_preset(std::string_view name) {
    for (const auto& n : preset_names()) {
        if (n == name) return true;
    }
    return false;
}

json preset_json(std::string_view name) {
    json isolated_topo = {{"mode", "isolated"},
                          {"engines", {{"generator", 1}, {"fixer", 1}}},
                          {"engine", engine_defaults()},
                          {"tools", {{"executor", 4}}}};
    json shared_topo = {{"mode", "shared"},
                        {"total_engines", 2},
                        {"engine", engine_defaults()},
                        {"tools", {{"executor", 4}}}};
    json doc = common_preset();
    if (name == "nl2sql-isolated") {
        doc["topology"] = isolated_topo;
    } else if (name == "nl2sql-shared") {
        doc["topology"] = shared_topo;
    } else if (name == "nl2sql-compare") {
        doc["topology"] = isolated_topo;
        doc["seeds"] = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
        doc["cells"] = json::array({json{{"name", "isolated"}}, json{{"name", "shared"}, {"topology", shared_topo}}});
    } else {
        throw ConfigError("unknown preset '" + std::string(name) + "'");
    }
    return doc;
}

Distribution parse_distribution(const json& j, const std::string& where) {
    if (j.is_number()) return Distribution::constant(j.get<double>());
    if (!j.is_object()) throw ConfigError(where + " must be a number or a distribution object");
    Keys k(j, where);
    double scale = 1.0;
    k.read("scale", scale);
    std::optional<Distribution> d;
    int forms = 0;
    try {
        if (k.has("constant")) {
            ++forms;
            d = Distribution::constant(k.get<double>("constant"));
        }
        if (k.has("uniform")) {
            ++forms;
            const auto v = k.get<std::vector<double>>("uniform");
            if (v.size() != 2) throw ConfigError(k.path("uniform") + " must be [lo, hi]");
            d = Distribution::uniform(v[0], v[1]);
        }
        if (k.has("geometric")) {
            ++forms;
            Keys g(k.at("geometric"), k.path("geometric"));
            d = Distribution::truncated_geometric(g.get<double>("p"), g.get<long long>("min"),
                                                  g.get<long long>("max"));
            g.finish();
        }
        if (k.has("empirical")) {
            ++forms;
            d = Distribution::empirical(k.get<std::vector<double>>("empirical"));
        }
    } catch (const ConfigError& e) {
        throw ConfigError(where + ": " + e.what());
    }
    if (forms != 1) throw ConfigError(where + " needs exactly one of constant, uniform, geometric, empirical");
    k.finish();
    return scale == 1.0 ? *d : d->scaled(scale);
}

json distribution_json(const Distribution& d) {
    json j;
    std::visit(
        [&](const auto& shape) {
            using T = std::decay_t<decltype(shape)>;
            if constexpr (std::is_same_v<T, Distribution::Constant>) {
                j["constant"] = shape.value;
            } else if constexpr (std::is_same_v<T, Distribution::Uniform>) {
                j["uniform"] = {shape.lo, shape.hi};
            } else if constexpr (std::is_same_v<T, Distribution::TruncatedGeometric>) {
                j["geometric"] = {{"p", shape.p}, {"min", shape.min}, {"max", shape.max}};
            } else {
                j["empirical"] = shape.values;
            }
        },
        d.shape());
    if (d.scale() != 1.0) j["scale"] = d.scale();
    return j;
}

RunConfigFile parse_config(const json& raw) {
    const json doc = resolve_preset(raw);
    RunConfigFile file;
    json base = doc;
    base.erase("cells");
    file.base = parse_sim(base);

    if (doc.contains("seeds")) {
        try {
            file.seeds = doc.at("seeds").get<std::vector<std::uint64_t>>();
        } catch (const json::exception&) {
            throw ConfigError("seeds must be a list of non-negative integers");
        }
    } else {
        file.seeds = {file.base.seed};
    }
    if (doc.contains("output_dir")) {
        if (!doc.at("output_dir").is_string()) throw ConfigError("output_dir must be a string");
        file.output_dir = doc.at("output_dir").get<std::string>();
    }
    if (doc.contains("cells")) {
        const json& cells = doc.at("cells");
        if (!cells.is_array()) throw ConfigError("cells must be an array");
        std::set<std::string> names;
        for (std::size_t i = 0; i < cells.size(); ++i) {
            const json& c = cells[i];
            if (!c.is_object() || !c.contains("name") || !c.at("name").is_string()) {
                throw ConfigError("cells[" + std::to_string(i) + "] needs a string name");
            }
            const auto name = c.at("name").get<std::string>();
            if (!names.insert(name).second) throw ConfigError("cell name '" + name + "' repeats");
            for (const auto& [key, v] : c.items()) {
                if (key == "seeds" || key == "output_dir" || key == "cells") {
                    throw ConfigError("cells[" + std::to_string(i) + "]." + key + " is only valid at file level");
                }
            }
            json merged = base;
            json overlay = c;
            overlay.erase("name");
            if (overlay.contains("preset")) {
                merged = preset_json(overlay.at("preset").get<std::string>());
                overlay.erase("preset");
            }
            merged.merge_patch(overlay);
            merged.erase("seeds");
            merged.erase("output_dir");
            try {
                file.cells.push_back({name, parse_sim(merged)});
            } catch (const ConfigError& e) {
                throw ConfigError("cell '" + name + "': " + e.what());
            }
        }
    }
    return file;
}

RunConfigFile load_config(const std::string& path_or_preset) {
    const std::filesystem::path path(path_or_preset);
    if (!std::filesystem::exists(path)) {
        if (is_preset(path_or_preset)) return parse_config(preset_json(path_or_preset));
        throw ConfigError("config file '" + path_or_preset + "' not found");
    }
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path_or_preset + "'");
    json doc;
    try {
        doc = json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const json::parse_error& e) {
        throw ConfigError("'" + path_or_preset + "' is not valid JSON: " + e.what());
    }
    return parse_config(doc);
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> out;
    try {
        if (auto dots = text.find(".."); dots != std::string::npos) {
            const auto a = std::stoull(text.substr(0, dots));
            const auto b = std::stoull(text.substr(dots + 2));
            if (b < a) throw ConfigError("seed range " + text + " is empty");
            for (auto s = a; s <= b; ++s) out.push_back(s);
        } else {
            std::istringstream is(text);
            std::string part;
            while (std::getline(is, part, ',')) {
                if (!part.empty()) out.push_back(std::stoull(part));
            }
        }
    } catch (const std::logic_error&) {
        throw ConfigError("cannot parse seeds '" + text + "'; use A..B or A,B,C");
    }
    if (out.empty()) throw ConfigError("no seeds given");
    return out;
}

}  // namespace cortex
