#include "taskadapt/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "taskadapt/errors.hpp"
#include "taskadapt/pool.hpp"
#include "taskadapt/svg.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace taskadapt {

std::string format_fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    return buf;
}

namespace {

std::string slug(const Instruction& instr) {
    std::string s = render(instr);
    std::replace(s.begin(), s.end(), ' ', '-');
    return s;
}

void write_file(const fs::path& path, const std::string& content) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open for writing: " + path.string());
    out << content;
    if (!out) throw Error("failed writing: " + path.string());
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifact("missing file: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
    std::istringstream in(read_file(path));
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        for (;;) {
            const std::size_t comma = line.find(',', start);
            if (comma == std::string::npos) {
                fields.push_back(line.substr(start));
                break;
            }
            fields.push_back(line.substr(start, comma - start));
            start = comma + 1;
        }
        rows.push_back(std::move(fields));
    }
    return rows;
}

ordered_json load_manifest(const RunConfig& cfg) {
    const fs::path path = fs::path(cfg.out_dir) / "manifest.json";
    if (!fs::exists(path)) return ordered_json::object();
    try {
        return ordered_json::parse(read_file(path));
    } catch (const json::exception&) {
        throw Error("unreadable manifest: " + path.string());
    }
}

void save_manifest(const RunConfig& cfg, const ordered_json& manifest) {
    write_file(fs::path(cfg.out_dir) / "manifest.json", manifest.dump(2) + "\n");
}

std::uint64_t config_hash(const RunConfig& cfg) {
    SeedChain chain;
    chain.mix(config_text(cfg));
    return chain.value();
}

ordered_json token_table_json() {
    ordered_json out = ordered_json::object();
    for (const auto& [word, id] : TokenTable::entries()) out[word] = id;
    out["<pad>"] = kPaddingToken;
    return out;
}

std::vector<std::string> instruction_list(const std::vector<Instruction>& v) {
    std::vector<std::string> out;
    out.reserve(v.size());
    for (const Instruction& i : v) out.push_back(render(i));
    return out;
}

}  // namespace

// --- configuration --------------------------------------------------------------

void RunConfig::validate() const {
    env.validate();
    train.validate();
    classifier.validate();
    if (parallelism < 1) throw ConfigError("parallelism must be >= 1");
    if (k < 2) throw ConfigError("k must be >= 2");
    if (k >= kNumInstructions) throw ConfigError("k must be < 24");
    if (p < 1) throw ConfigError("p must be >= 1");
    if (p > kNumInstructions) throw ConfigError("p must be <= 24");
    if (n_adapt_steps < 1) throw ConfigError("n_adapt_steps must be >= 1");
    if (classifier_runs < 1) throw ConfigError("classifier_runs must be >= 1");
    if (grid_runs < 1) throw ConfigError("grid_runs must be >= 1");
    if (!alpha.empty() && static_cast<int>(alpha.size()) != k)
        throw ConfigError("alpha list length disagrees with k");
    if (!beta.empty() && static_cast<int>(beta.size()) != p)
        throw ConfigError("beta list length disagrees with p");
}

namespace {

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + value + "'");
}

long parse_long(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const long v = std::stol(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected an integer, got '" + value + "'");
    }
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + value + "'");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const std::uint64_t v = std::stoull(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected an unsigned integer, got '" + value + "'");
    }
}

std::vector<std::string> split(const std::string& value, char sep) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (start <= value.size()) {
        const std::size_t pos = value.find(sep, start);
        if (pos == std::string::npos) {
            if (start < value.size()) parts.push_back(value.substr(start));
            break;
        }
        if (pos > start) parts.push_back(value.substr(start, pos - start));
        start = pos + 1;
    }
    return parts;
}

std::vector<Instruction> parse_instruction_list(const std::string& value) {
    std::vector<Instruction> out;
    for (const std::string& part : split(value, ';')) out.push_back(parse(part));
    return out;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
    std::vector<int> out;
    for (const std::string& part : split(value, ','))
        out.push_back(static_cast<int>(parse_long(key, part)));
    return out;
}

std::string join_ints(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(v[i]);
    }
    return out;
}

std::string join_instructions(const std::vector<Instruction>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ';';
        out += render(v[i]);
    }
    return out;
}

// Config schema: every recognized key with getter/setter, used for parsing,
// environment overrides, and the canonical resolved-config dump. Runtime-only
// knobs (out_dir, parallelism, force) are deliberately not part of the
// schema: artifacts must not depend on them.
struct ConfigKey {
    const char* name;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

const std::vector<ConfigKey>& config_schema() {
    static const std::vector<ConfigKey> schema = {
        {"seed", [](RunConfig& c, const std::string& v) { c.seed = parse_u64("seed", v); },
         [](const RunConfig& c) { return std::to_string(c.seed); }},
        {"synthetic", [](RunConfig& c, const std::string& v) { c.synthetic = parse_bool("synthetic", v); },
         [](const RunConfig& c) { return c.synthetic ? "true" : "false"; }},
        {"k", [](RunConfig& c, const std::string& v) { c.k = static_cast<int>(parse_long("k", v)); },
         [](const RunConfig& c) { return std::to_string(c.k); }},
        {"p", [](RunConfig& c, const std::string& v) { c.p = static_cast<int>(parse_long("p", v)); },
         [](const RunConfig& c) { return std::to_string(c.p); }},
        {"alpha", [](RunConfig& c, const std::string& v) { c.alpha = parse_instruction_list(v); },
         [](const RunConfig& c) { return join_instructions(c.alpha); }},
        {"beta", [](RunConfig& c, const std::string& v) { c.beta = parse_instruction_list(v); },
         [](const RunConfig& c) { return join_instructions(c.beta); }},
        {"n_adapt_steps",
         [](RunConfig& c, const std::string& v) { c.n_adapt_steps = parse_long("n_adapt_steps", v); },
         [](const RunConfig& c) { return std::to_string(c.n_adapt_steps); }},
        {"extended_grid",
         [](RunConfig& c, const std::string& v) { c.extended_grid = parse_bool("extended_grid", v); },
         [](const RunConfig& c) { return c.extended_grid ? "true" : "false"; }},
        {"scratch_baselines",
         [](RunConfig& c, const std::string& v) { c.scratch_baselines = parse_bool("scratch_baselines", v); },
         [](const RunConfig& c) { return c.scratch_baselines ? "true" : "false"; }},
        {"room_size",
         [](RunConfig& c, const std::string& v) { c.env.room_size = static_cast<int>(parse_long("room_size", v)); },
         [](const RunConfig& c) { return std::to_string(c.env.room_size); }},
        {"n_distractors",
         [](RunConfig& c, const std::string& v) { c.env.n_distractors = static_cast<int>(parse_long("n_distractors", v)); },
         [](const RunConfig& c) { return std::to_string(c.env.n_distractors); }},
        {"max_steps",
         [](RunConfig& c, const std::string& v) { c.env.max_steps = static_cast<int>(parse_long("max_steps", v)); },
         [](const RunConfig& c) { return std::to_string(c.env.max_steps); }},
        {"randomize_agent_start",
         [](RunConfig& c, const std::string& v) { c.env.randomize_agent_start = parse_bool("randomize_agent_start", v); },
         [](const RunConfig& c) { return c.env.randomize_agent_start ? "true" : "false"; }},
        {"backend",
         [](RunConfig& c, const std::string& v) { c.train.backend = backend_from_string(v); },
         [](const RunConfig& c) { return std::string(to_string(c.train.backend)); }},
        {"gamma", [](RunConfig& c, const std::string& v) { c.train.gamma = parse_double("gamma", v); },
         [](const RunConfig& c) { return format_fixed(c.train.gamma, 6); }},
        {"learning_rate",
         [](RunConfig& c, const std::string& v) { c.train.learning_rate = parse_double("learning_rate", v); },
         [](const RunConfig& c) { return format_fixed(c.train.learning_rate, 9); }},
        {"adam_epsilon",
         [](RunConfig& c, const std::string& v) { c.train.adam_epsilon = parse_double("adam_epsilon", v); },
         [](const RunConfig& c) { return format_fixed(c.train.adam_epsilon, 9); }},
        {"target_update_steps",
         [](RunConfig& c, const std::string& v) { c.train.target_update_steps = static_cast<int>(parse_long("target_update_steps", v)); },
         [](const RunConfig& c) { return std::to_string(c.train.target_update_steps); }},
        {"warmup_random_steps",
         [](RunConfig& c, const std::string& v) { c.train.warmup_random_steps = parse_long("warmup_random_steps", v); },
         [](const RunConfig& c) { return std::to_string(c.train.warmup_random_steps); }},
        {"epsilon_decay_steps",
         [](RunConfig& c, const std::string& v) { c.train.epsilon_decay_steps = parse_long("epsilon_decay_steps", v); },
         [](const RunConfig& c) { return std::to_string(c.train.epsilon_decay_steps); }},
        {"epsilon_min",
         [](RunConfig& c, const std::string& v) { c.train.epsilon_min = parse_double("epsilon_min", v); },
         [](const RunConfig& c) { return format_fixed(c.train.epsilon_min, 6); }},
        {"batch_size",
         [](RunConfig& c, const std::string& v) { c.train.batch_size = static_cast<int>(parse_long("batch_size", v)); },
         [](const RunConfig& c) { return std::to_string(c.train.batch_size); }},
        {"max_train_steps",
         [](RunConfig& c, const std::string& v) { c.train.max_train_steps = parse_long("max_train_steps", v); },
         [](const RunConfig& c) { return std::to_string(c.train.max_train_steps); }},
        {"convergence_threshold",
         [](RunConfig& c, const std::string& v) { c.train.convergence_threshold = parse_double("convergence_threshold", v); },
         [](const RunConfig& c) { return format_fixed(c.train.convergence_threshold, 6); }},
        {"convergence_window",
         [](RunConfig& c, const std::string& v) { c.train.convergence_window = static_cast<int>(parse_long("convergence_window", v)); },
         [](const RunConfig& c) { return std::to_string(c.train.convergence_window); }},
        {"min_steps_before_convergence",
         [](RunConfig& c, const std::string& v) { c.train.min_steps_before_convergence = parse_long("min_steps_before_convergence", v); },
         [](const RunConfig& c) { return std::to_string(c.train.min_steps_before_convergence); }},
        {"replay_capacity",
         [](RunConfig& c, const std::string& v) { c.train.replay_capacity = parse_long("replay_capacity", v); },
         [](const RunConfig& c) { return std::to_string(c.train.replay_capacity); }},
        {"log_interval",
         [](RunConfig& c, const std::string& v) { c.train.log_interval = parse_long("log_interval", v); },
         [](const RunConfig& c) { return std::to_string(c.train.log_interval); }},
        {"eval_epsilon",
         [](RunConfig& c, const std::string& v) { c.train.eval_epsilon = parse_double("eval_epsilon", v); },
         [](const RunConfig& c) { return format_fixed(c.train.eval_epsilon, 6); }},
        {"hidden_size",
         [](RunConfig& c, const std::string& v) { c.train.hidden_size = static_cast<int>(parse_long("hidden_size", v)); },
         [](const RunConfig& c) { return std::to_string(c.train.hidden_size); }},
        {"classifier_learning_rate",
         [](RunConfig& c, const std::string& v) { c.classifier.learning_rate = parse_double("classifier_learning_rate", v); },
         [](const RunConfig& c) { return format_fixed(c.classifier.learning_rate, 9); }},
        {"classifier_max_steps",
         [](RunConfig& c, const std::string& v) { c.classifier.max_steps = parse_long("classifier_max_steps", v); },
         [](const RunConfig& c) { return std::to_string(c.classifier.max_steps); }},
        {"classifier_batch_size",
         [](RunConfig& c, const std::string& v) { c.classifier.batch_size = static_cast<int>(parse_long("classifier_batch_size", v)); },
         [](const RunConfig& c) { return std::to_string(c.classifier.batch_size); }},
        {"validation_fraction",
         [](RunConfig& c, const std::string& v) { c.classifier.validation_fraction = parse_double("validation_fraction", v); },
         [](const RunConfig& c) { return format_fixed(c.classifier.validation_fraction, 6); }},
        {"classifier_eval_interval",
         [](RunConfig& c, const std::string& v) { c.classifier.eval_interval = static_cast<int>(parse_long("classifier_eval_interval", v)); },
         [](const RunConfig& c) { return std::to_string(c.classifier.eval_interval); }},
        {"classifier_patience",
         [](RunConfig& c, const std::string& v) { c.classifier.patience = static_cast<int>(parse_long("classifier_patience", v)); },
         [](const RunConfig& c) { return std::to_string(c.classifier.patience); }},
        {"classifier_runs",
         [](RunConfig& c, const std::string& v) { c.classifier_runs = static_cast<int>(parse_long("classifier_runs", v)); },
         [](const RunConfig& c) { return std::to_string(c.classifier_runs); }},
        {"grid_k", [](RunConfig& c, const std::string& v) { c.grid_k = parse_int_list("grid_k", v); },
         [](const RunConfig& c) { return join_ints(c.grid_k); }},
        {"grid_p", [](RunConfig& c, const std::string& v) { c.grid_p = parse_int_list("grid_p", v); },
         [](const RunConfig& c) { return join_ints(c.grid_p); }},
        {"grid_runs",
         [](RunConfig& c, const std::string& v) { c.grid_runs = static_cast<int>(parse_long("grid_runs", v)); },
         [](const RunConfig& c) { return std::to_string(c.grid_runs); }},
    };
    return schema;
}

}  // namespace

void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
    for (const ConfigKey& entry : config_schema()) {
        if (key == entry.name) {
            entry.set(cfg, value);
            return;
        }
    }
    throw ConfigError("unknown config key '" + key + "'");
}

RunConfig load_run_config(const std::optional<std::string>& path) {
    RunConfig cfg;
    if (path) {
        std::istringstream in(read_file(*path));
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const std::size_t hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            // Trim.
            const auto begin = line.find_first_not_of(" \t\r");
            if (begin == std::string::npos) continue;
            const auto end = line.find_last_not_of(" \t\r");
            line = line.substr(begin, end - begin + 1);
            const std::size_t eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
            std::string key = line.substr(0, eq);
            std::string value = line.substr(eq + 1);
            while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
            while (!value.empty() && (value.front() == ' ' || value.front() == '\t')) value.erase(0, 1);
            apply_config_entry(cfg, key, value);
        }
    }
    // TASKADAPT_<KEY> environment overrides.
    for (const ConfigKey& entry : config_schema()) {
        std::string env_name = "TASKADAPT_";
        for (const char* c = entry.name; *c; ++c)
            env_name.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(*c))));
        if (const char* value = std::getenv(env_name.c_str())) entry.set(cfg, value);
    }
    return cfg;
}

std::string config_text(const RunConfig& cfg) {
    std::string out;
    for (const ConfigKey& entry : config_schema()) {
        out += entry.name;
        out += '=';
        out += entry.get(cfg);
        out += '\n';
    }
    return out;
}

ExperimentPlan make_plan(const RunConfig& cfg) {
    cfg.validate();
    ExperimentPlan plan;
    plan.env_config = cfg.env;
    plan.train_config = cfg.train;
    plan.n_adapt_steps = cfg.n_adapt_steps;
    plan.master_seed = cfg.seed;
    if (!cfg.alpha.empty()) {
        plan.alpha = cfg.alpha;
    } else {
        Rng rng(derive_seed(cfg.seed, "alpha"));
        plan.alpha = sample_distinct(rng, cfg.k, {});
    }
    if (!cfg.beta.empty()) {
        plan.beta = cfg.beta;
    } else {
        Rng rng(derive_seed(cfg.seed, "beta"));
        plan.beta = sample_distinct(rng, cfg.p, {});
    }
    plan.validate();
    return plan;
}

// --- stage: train-base -----------------------------------------------------------

namespace {

fs::path snapshot_path(const RunConfig& cfg, const Instruction& instr) {
    return fs::path(cfg.out_dir) / "snapshots" / ("base_" + slug(instr) + ".snap");
}

std::string stats_csv(const TrainStats& stats) {
    std::string out = "step,episode,rolling_success,epsilon,loss\n";
    for (const CurvePoint& p : stats.curve) {
        out += std::to_string(p.step) + "," + std::to_string(p.episode) + "," +
               format_fixed(p.rolling_success) + "," + format_fixed(p.epsilon) + "," +
               format_fixed(p.loss) + "\n";
    }
    return out;
}

void write_resolved_config(const RunConfig& cfg) {
    write_file(fs::path(cfg.out_dir) / "config.resolved.txt", config_text(cfg));
}

}  // namespace

void stage_train_base(const RunConfig& cfg) {
    const ExperimentPlan plan = make_plan(cfg);

    bool existing = false;
    for (const Instruction& instr : plan.alpha)
        if (fs::exists(snapshot_path(cfg, instr))) existing = true;
    if (existing && !cfg.force)
        throw ConfigError("snapshots already exist in " + cfg.out_dir + "; pass --force to overwrite");

    write_resolved_config(cfg);
    const std::vector<BasePolicyResult> results = train_base_policies(plan, cfg.parallelism);

    ordered_json manifest = load_manifest(cfg);
    manifest["software_version"] = kSoftwareVersion;
    manifest["config_hash"] = config_hash(cfg);
    manifest["token_table"] = token_table_json();
    manifest["plan"] = {{"alpha", instruction_list(plan.alpha)},
                        {"beta", instruction_list(plan.beta)},
                        {"n_adapt_steps", plan.n_adapt_steps},
                        {"master_seed", plan.master_seed}};

    ordered_json policies = ordered_json::array();
    for (const BasePolicyResult& r : results) {
        ordered_json entry;
        entry["instruction"] = render(r.instruction);
        entry["converged"] = r.converged;
        entry["final_success_rate"] = r.final_success_rate;
        entry["steps_used"] = r.steps_used;
        entry["seed"] = base_policy_seed(plan.master_seed, r.instruction);
        if (r.snapshot) {
            const fs::path path = snapshot_path(cfg, r.instruction);
            fs::create_directories(path.parent_path());
            save_snapshot(*r.snapshot, path.string());
            entry["snapshot"] = path.filename().string();
            entry["snapshot_hash"] = snapshot_hash(*r.snapshot);
        }
        write_file(fs::path(cfg.out_dir) / "stats" / ("base_" + slug(r.instruction) + ".csv"),
                   stats_csv(r.stats));
        policies.push_back(entry);
    }
    manifest["base_policies"] = policies;
    save_manifest(cfg, manifest);
}

// --- stage: sample ----------------------------------------------------------------

namespace {

fs::path cell_path(const RunConfig& cfg, const Instruction& base, const Instruction& transfer) {
    return fs::path(cfg.out_dir) / "cells" / (slug(base) + "__" + slug(transfer) + ".json");
}

fs::path scratch_path(const RunConfig& cfg, const Instruction& transfer) {
    return fs::path(cfg.out_dir) / "scratch" / (slug(transfer) + ".json");
}

ordered_json sample_to_json(const AdaptationSample& s) {
    ordered_json out;
    out["base_instruction"] = render(s.base_instruction);
    out["transfer_instruction"] = render(s.transfer_instruction);
    out["n_steps"] = s.n_steps;
    out["success_rate"] = s.success_rate;
    out["seed"] = s.seed;
    ordered_json curve = ordered_json::array();
    for (const CurvePoint& p : s.curve)
        curve.push_back({p.step, p.episode, p.rolling_success, p.epsilon, p.loss});
    out["curve"] = curve;
    return out;
}

AdaptationSample sample_from_json(const json& j) {
    AdaptationSample s;
    s.base_instruction = parse(j.at("base_instruction").get<std::string>());
    s.transfer_instruction = parse(j.at("transfer_instruction").get<std::string>());
    s.n_steps = j.at("n_steps").get<long>();
    s.success_rate = j.at("success_rate").get<double>();
    s.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& p : j.at("curve"))
        s.curve.push_back({p.at(0).get<long>(), p.at(1).get<long>(), p.at(2).get<double>(),
                           p.at(3).get<double>(), p.at(4).get<double>()});
    return s;
}

std::vector<Instruction> manifest_instructions(const ordered_json& manifest, const char* field) {
    std::vector<Instruction> out;
    if (!manifest.contains("plan")) throw MissingArtifact("manifest has no plan; run train-base first");
    for (const auto& text : manifest.at("plan").at(field)) out.push_back(parse(text.get<std::string>()));
    return out;
}

std::string samples_csv(const std::vector<AdaptationSample>& samples) {
    std::string out = "base_instruction,transfer_instruction,n_steps,success_rate,seed\n";
    for (const AdaptationSample& s : samples) {
        out += render(s.base_instruction) + "," + render(s.transfer_instruction) + "," +
               std::to_string(s.n_steps) + "," + format_fixed(s.success_rate) + "," +
               std::to_string(s.seed) + "\n";
    }
    return out;
}

std::string curves_csv(const std::vector<AdaptationSample>& samples) {
    std::string out = "base_instruction,transfer_instruction,step,rolling_success\n";
    for (const AdaptationSample& s : samples) {
        for (const CurvePoint& p : s.curve) {
            out += render(s.base_instruction) + "," + render(s.transfer_instruction) + "," +
                   std::to_string(p.step) + "," + format_fixed(p.rolling_success) + "\n";
        }
    }
    return out;
}

}  // namespace

void stage_sample(const RunConfig& cfg) {
    const ExperimentPlan plan = make_plan(cfg);
    ordered_json manifest = load_manifest(cfg);

    // Converged bases, loaded from disk.
    std::vector<PolicySnapshot> bases;
    if (!manifest.contains("base_policies"))
        throw MissingArtifact("no base policies recorded; run train-base first");
    for (const auto& entry : manifest.at("base_policies")) {
        if (!entry.value("converged", false) || !entry.contains("snapshot")) continue;
        const fs::path path = fs::path(cfg.out_dir) / "snapshots" / entry.at("snapshot").get<std::string>();
        if (!fs::exists(path)) throw MissingArtifact("missing snapshot: " + path.string());
        bases.push_back(load_snapshot(path.string()));
    }
    if (bases.empty()) throw MissingArtifact("no converged base snapshots available");
    std::sort(bases.begin(), bases.end(), [](const PolicySnapshot& a, const PolicySnapshot& b) {
        return a.instruction < b.instruction;
    });

    const std::vector<Instruction> transfers =
        cfg.extended_grid ? enumerate_all() : plan.beta;

    // Cells are resumable: existing cell files are kept unless --force.
    struct Cell {
        const PolicySnapshot* base;
        Instruction transfer;
        fs::path path;
    };
    std::vector<Cell> pending;
    for (const PolicySnapshot& base : bases) {
        for (const Instruction& transfer : transfers) {
            const fs::path path = cell_path(cfg, base.instruction, transfer);
            if (cfg.force || !fs::exists(path)) pending.push_back({&base, transfer, path});
        }
    }
    std::vector<std::function<void()>> jobs;
    for (const Cell& cell : pending) {
        jobs.emplace_back([&plan, &cell]() {
            const AdaptationSample sample = sample_adaptation(
                *cell.base, cell.transfer, plan.n_adapt_steps, plan.env_config, plan.train_config,
                adaptation_seed(plan.master_seed, cell.base->instruction, cell.transfer));
            write_file(cell.path, sample_to_json(sample).dump(2) + "\n");
        });
    }
    if (cfg.scratch_baselines) {
        for (const Instruction& transfer : plan.beta) {
            const fs::path path = scratch_path(cfg, transfer);
            if (!cfg.force && fs::exists(path)) continue;
            jobs.emplace_back([&plan, &cfg, transfer, path]() {
                const AdaptationSample sample =
                    run_scratch_baseline(transfer, plan.n_adapt_steps, plan.env_config,
                                         plan.train_config, scratch_seed(plan.master_seed, transfer));
                write_file(path, sample_to_json(sample).dump(2) + "\n");
            });
        }
    }
    run_jobs(jobs, cfg.parallelism);

    // Deterministic assembly from the cell files, in canonical order.
    std::vector<AdaptationSample> samples;
    ordered_json cell_status = ordered_json::array();
    for (const PolicySnapshot& base : bases) {
        for (const Instruction& transfer : enumerate_all()) {
            if (!cfg.extended_grid &&
                std::find(plan.beta.begin(), plan.beta.end(), transfer) == plan.beta.end())
                continue;
            const fs::path path = cell_path(cfg, base.instruction, transfer);
            samples.push_back(sample_from_json(json::parse(read_file(path))));
            cell_status.push_back({{"base", render(base.instruction)},
                                   {"transfer", render(transfer)},
                                   {"status", "done"}});
        }
    }
    write_file(fs::path(cfg.out_dir) / "samples.csv", samples_csv(samples));
    write_file(fs::path(cfg.out_dir) / "curves.csv", curves_csv(samples));

    if (cfg.scratch_baselines) {
        std::vector<AdaptationSample> scratch;
        std::vector<Instruction> sorted_beta = plan.beta;
        std::sort(sorted_beta.begin(), sorted_beta.end());
        for (const Instruction& transfer : sorted_beta)
            scratch.push_back(sample_from_json(json::parse(read_file(scratch_path(cfg, transfer)))));
        write_file(fs::path(cfg.out_dir) / "scratch_samples.csv", samples_csv(scratch));
        write_file(fs::path(cfg.out_dir) / "scratch_curves.csv", curves_csv(scratch));
    }

    write_resolved_config(cfg);
    manifest["cells"] = cell_status;
    save_manifest(cfg, manifest);
}

// --- stage: build-dataset ----------------------------------------------------------

namespace {

std::vector<AdaptationSample> read_samples_csv(const fs::path& path) {
    const auto rows = read_csv(path);
    if (rows.empty() || rows[0].size() < 5 || rows[0][0] != "base_instruction")
        throw MissingArtifact("unexpected samples CSV format: " + path.string());
    std::vector<AdaptationSample> samples;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        AdaptationSample s;
        s.base_instruction = parse(rows[i][0]);
        s.transfer_instruction = parse(rows[i][1]);
        s.n_steps = std::stol(rows[i][2]);
        s.success_rate = std::stod(rows[i][3]);
        s.seed = std::stoull(rows[i][4]);
        samples.push_back(s);
    }
    return samples;
}

std::string dataset_csv(const std::vector<ComparisonRecord>& records) {
    std::string out = "z_x,z_i,z_j,label\n";
    for (const ComparisonRecord& r : records)
        out += render(r.z_x) + "," + render(r.z_i) + "," + render(r.z_j) + "," +
               std::to_string(r.label) + "\n";
    return out;
}

std::vector<ComparisonRecord> read_dataset_csv(const fs::path& path) {
    const auto rows = read_csv(path);
    if (rows.empty() || rows[0].size() < 4 || rows[0][0] != "z_x")
        throw MissingArtifact("unexpected dataset CSV format: " + path.string());
    std::vector<ComparisonRecord> records;
    for (std::size_t i = 1; i < rows.size(); ++i)
        records.push_back({parse(rows[i][0]), parse(rows[i][1]), parse(rows[i][2]),
                           static_cast<int>(std::stol(rows[i][3]))});
    return records;
}

}  // namespace

void stage_build_dataset(const RunConfig& cfg) {
    const fs::path samples_path = fs::path(cfg.out_dir) / "samples.csv";
    if (!fs::exists(samples_path))
        throw MissingArtifact("samples.csv not found; run sample first");
    const std::vector<AdaptationSample> samples = read_samples_csv(samples_path);

    ordered_json manifest = load_manifest(cfg);
    const std::vector<Instruction> beta = manifest_instructions(manifest, "beta");

    std::vector<AdaptationSample> train_samples;
    std::vector<AdaptationSample> holdout_samples;
    for (const AdaptationSample& s : samples) {
        if (std::find(beta.begin(), beta.end(), s.transfer_instruction) != beta.end()) {
            train_samples.push_back(s);
        } else {
            holdout_samples.push_back(s);
        }
    }

    const std::vector<ComparisonRecord> train_records = build_dataset(train_samples);
    if (train_records.empty())
        throw DegenerateDataset("all base-policy pairs tied; no comparison records to emit");
    write_file(fs::path(cfg.out_dir) / "dataset.csv", dataset_csv(train_records));

    if (!holdout_samples.empty()) {
        write_file(fs::path(cfg.out_dir) / "holdout_dataset.csv",
                   dataset_csv(build_dataset(holdout_samples)));
    }

    manifest["dataset"] = {{"train_records", train_records.size()},
                           {"holdout_available", !holdout_samples.empty()}};
    save_manifest(cfg, manifest);
}

// --- stage: train-transfer ----------------------------------------------------------

namespace {

std::string predictions_csv(const TransferModel& model, const std::vector<ComparisonRecord>& records) {
    std::string out = "z_x,z_i,z_j,probability,label,correct\n";
    for (const ComparisonRecord& r : records) {
        const double prob = model.forward(r.z_x, r.z_i, r.z_j);
        const int predicted = prob >= 0.5 ? 1 : 0;
        out += render(r.z_x) + "," + render(r.z_i) + "," + render(r.z_j) + "," +
               format_fixed(prob) + "," + std::to_string(r.label) + "," +
               (predicted == r.label ? "1" : "0") + "\n";
    }
    return out;
}

double mean_of(const std::vector<double>& v) {
    double sum = 0.0;
    for (double x : v) sum += x;
    return sum / static_cast<double>(v.size());
}

double stddev_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double sq = 0.0;
    for (double x : v) sq += (x - m) * (x - m);
    return std::sqrt(sq / static_cast<double>(v.size() - 1));
}

}  // namespace

TransferSummary stage_train_transfer(const RunConfig& cfg) {
    fs::create_directories(cfg.out_dir);  // synthetic mode may run standalone
    std::vector<ComparisonRecord> train_records;
    std::vector<ComparisonRecord> holdout_records;
    TransferSummary summary;

    if (cfg.synthetic) {
        // CI mode: the verb-dominance generator stands in for sampled data.
        train_records = synthetic_verb_dataset(200, derive_seed(cfg.seed, "synthetic-train"));
        holdout_records = synthetic_verb_dataset(100, derive_seed(cfg.seed, "synthetic-holdout"));
        summary.holdout_source = "synthetic";
    } else {
        const fs::path dataset_path = fs::path(cfg.out_dir) / "dataset.csv";
        if (!fs::exists(dataset_path))
            throw MissingArtifact("dataset.csv not found; run build-dataset first");
        train_records = read_dataset_csv(dataset_path);
        const fs::path holdout_path = fs::path(cfg.out_dir) / "holdout_dataset.csv";
        if (fs::exists(holdout_path)) {
            holdout_records = read_dataset_csv(holdout_path);
            summary.holdout_source = "extended-grid";
        } else {
            // No extended grid: hold out a fraction of the beta records.
            Rng rng(derive_seed(cfg.seed, "holdout-split"));
            std::vector<ComparisonRecord> shuffled = train_records;
            for (std::size_t i = shuffled.size(); i > 1; --i)
                std::swap(shuffled[i - 1], shuffled[rng.bounded(i)]);
            const std::size_t n_holdout = std::max<std::size_t>(1, shuffled.size() / 5);
            holdout_records.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_holdout));
            train_records.assign(shuffled.begin() + static_cast<std::ptrdiff_t>(n_holdout), shuffled.end());
            summary.holdout_source = "beta-split";
        }
    }
    if (holdout_records.empty()) throw DegenerateDataset("no holdout records available");

    std::optional<TransferModel> first_model;
    for (int run = 0; run < cfg.classifier_runs; ++run) {
        ClassifierConfig ccfg = cfg.classifier;
        ccfg.seed = derive_seed(cfg.seed, "classifier-run", static_cast<std::uint64_t>(run));
        ClassifierResult result = train_classifier(train_records, ccfg);
        summary.accuracies.push_back(accuracy(result.model, holdout_records));
        if (run == 0) first_model = std::move(result.model);
    }
    summary.mean = mean_of(summary.accuracies);
    summary.stddev = stddev_of(summary.accuracies);

    save_model(*first_model, (fs::path(cfg.out_dir) / "model.tmod").string());
    write_file(fs::path(cfg.out_dir) / "predictions.csv",
               predictions_csv(*first_model, holdout_records));

    ordered_json summary_json;
    summary_json["runs"] = cfg.classifier_runs;
    ordered_json acc = ordered_json::array();
    for (double a : summary.accuracies) acc.push_back(format_fixed(a));
    summary_json["accuracies"] = acc;
    summary_json["mean_accuracy"] = format_fixed(summary.mean);
    summary_json["std_accuracy"] = format_fixed(summary.stddev);
    summary_json["holdout_source"] = summary.holdout_source;
    summary_json["table_cell"] = format_fixed(summary.mean, 2) + " +-" + format_fixed(summary.stddev, 2);
    write_file(fs::path(cfg.out_dir) / "transfer_summary.json", summary_json.dump(2) + "\n");

    if (!cfg.synthetic) {
        ordered_json manifest = load_manifest(cfg);
        manifest["transfer_model"] = {{"mean_accuracy", summary.mean},
                                      {"std_accuracy", summary.stddev},
                                      {"holdout_source", summary.holdout_source}};
        save_manifest(cfg, manifest);
    }
    return summary;
}

// --- stage: grid ---------------------------------------------------------------------

double run_pipeline_once(const RunConfig& cfg, int k, int p, std::uint64_t master_seed) {
    RunConfig run_cfg = cfg;
    run_cfg.k = k;
    run_cfg.p = p;
    run_cfg.alpha.clear();
    run_cfg.beta.clear();
    run_cfg.seed = master_seed;

    const ExperimentPlan plan = make_plan(run_cfg);
    const std::vector<BasePolicyResult> bases = train_base_policies(plan, cfg.parallelism);
    const std::vector<AdaptationSample> all_samples =
        run_grid(plan, bases, enumerate_all(), cfg.parallelism);

    std::vector<AdaptationSample> train_samples;
    std::vector<AdaptationSample> holdout_samples;
    for (const AdaptationSample& s : all_samples) {
        if (std::find(plan.beta.begin(), plan.beta.end(), s.transfer_instruction) != plan.beta.end()) {
            train_samples.push_back(s);
        } else {
            holdout_samples.push_back(s);
        }
    }
    const std::vector<ComparisonRecord> train_records = build_dataset(train_samples);
    const std::vector<ComparisonRecord> holdout_records = build_dataset(holdout_samples);
    if (holdout_records.empty()) throw DegenerateDataset("holdout records all tied");

    ClassifierConfig ccfg = cfg.classifier;
    ccfg.seed = derive_seed(master_seed, "classifier");
    const ClassifierResult result = train_classifier(train_records, ccfg);
    return accuracy(result.model, holdout_records);
}

void stage_grid(const RunConfig& cfg, const AccuracyGridSpec& spec) {
    if (spec.k_values.empty() || spec.p_values.empty())
        throw ConfigError("grid spec needs at least one k and one p value");
    if (spec.runs < 1) throw ConfigError("grid runs must be >= 1");

    std::string out = "k,p,runs,mean_accuracy,std_accuracy,status\n";
    for (int k : spec.k_values) {
        for (int p : spec.p_values) {
            // A cell is feasible when pairs exist and the holdout set Z \ beta
            // is non-empty.
            if (k < 2 || k >= kNumInstructions || p < 1 || p >= kNumInstructions) {
                out += std::to_string(k) + "," + std::to_string(p) + "," +
                       std::to_string(spec.runs) + ",,,skipped\n";
                continue;
            }
            std::vector<double> accuracies;
            std::string status = "ok";
            for (int run = 0; run < spec.runs; ++run) {
                const std::uint64_t seed =
                    derive_seed(derive_seed(cfg.seed, "grid-cell", static_cast<std::uint64_t>(k) * 100 + p),
                                "run", static_cast<std::uint64_t>(run));
                try {
                    accuracies.push_back(run_pipeline_once(cfg, k, p, seed));
                } catch (const Error&) {
                    status = "failed";
                    break;
                }
            }
            if (status != "ok" || accuracies.empty()) {
                out += std::to_string(k) + "," + std::to_string(p) + "," +
                       std::to_string(spec.runs) + ",,,failed\n";
                continue;
            }
            out += std::to_string(k) + "," + std::to_string(p) + "," + std::to_string(spec.runs) +
                   "," + format_fixed(mean_of(accuracies)) + "," + format_fixed(stddev_of(accuracies)) +
                   ",ok\n";
        }
    }
    write_file(fs::path(cfg.out_dir) / "accuracy_grid.csv", out);
}

// --- stage: report --------------------------------------------------------------------

namespace {

std::vector<AdaptationSample> read_curves_csv(const fs::path& path) {
    const auto rows = read_csv(path);
    if (rows.empty() || rows[0].size() < 4 || rows[0][0] != "base_instruction")
        throw MissingArtifact("unexpected curves CSV format: " + path.string());
    std::vector<AdaptationSample> samples;
    std::map<std::pair<Instruction, Instruction>, std::size_t> index;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const Instruction base = parse(rows[i][0]);
        const Instruction transfer = parse(rows[i][1]);
        const auto key = std::pair(base, transfer);
        auto it = index.find(key);
        if (it == index.end()) {
            AdaptationSample s;
            s.base_instruction = base;
            s.transfer_instruction = transfer;
            it = index.emplace(key, samples.size()).first;
            samples.push_back(s);
        }
        samples[it->second].curve.push_back(
            {std::stol(rows[i][2]), 0, std::stod(rows[i][3]), 0.0, 0.0});
    }
    return samples;
}

}  // namespace

void stage_report(const RunConfig& cfg) {
    const fs::path curves_path = fs::path(cfg.out_dir) / "curves.csv";
    if (!fs::exists(curves_path)) throw MissingArtifact("curves.csv not found; run sample first");
    const std::vector<AdaptationSample> samples = read_curves_csv(curves_path);

    std::vector<AdaptationSample> scratch;
    const fs::path scratch_path = fs::path(cfg.out_dir) / "scratch_curves.csv";
    if (fs::exists(scratch_path)) scratch = read_curves_csv(scratch_path);

    const fs::path report_dir = fs::path(cfg.out_dir) / "report";
    for (MatchDimension dim : {MatchDimension::Verb, MatchDimension::Object, MatchDimension::Color}) {
        const MatchCurves curves = group_curves(samples, dim, scratch);
        const std::string name = to_string(dim);

        std::string csv = "step,match_mean,differ_mean,overall_mean,scratch_mean\n";
        for (std::size_t i = 0; i < curves.steps.size(); ++i) {
            csv += std::to_string(curves.steps[i]) + ",";
            csv += (curves.match_mean.empty() ? "" : format_fixed(curves.match_mean[i])) + ",";
            csv += (curves.differ_mean.empty() ? "" : format_fixed(curves.differ_mean[i])) + ",";
            csv += format_fixed(curves.overall_mean[i]) + ",";
            csv += (curves.scratch_mean.empty() ? "" : format_fixed(curves.scratch_mean[i]));
            csv += "\n";
        }
        write_file(report_dir / (name + "_curves.csv"), csv);

        auto to_points = [&](const std::vector<double>& mean) {
            std::vector<std::pair<double, double>> pts;
            for (std::size_t i = 0; i < mean.size(); ++i)
                pts.emplace_back(static_cast<double>(curves.steps[i]), mean[i]);
            return pts;
        };
        std::vector<PlotSeries> series;
        series.push_back({name + " match", "#c03030", to_points(curves.match_mean)});
        series.push_back({name + " differ", "#e09030", to_points(curves.differ_mean)});
        series.push_back({"all transfers", "#3060c0", to_points(curves.overall_mean)});
        series.push_back({"from scratch", "#30a050", to_points(curves.scratch_mean)});
        const std::string annotation =
            curves.empty_partition ? "warning: one match partition is empty" : "";
        write_file(report_dir / (name + ".svg"),
                   render_line_plot("Adaptation success by " + name + " match", "training steps",
                                    "rolling success rate", series, annotation));
    }
}

// --- select and rollout ------------------------------------------------------------------

std::vector<RankedBase> run_select(const std::string& model_path, const std::string& instruction_text,
                                   const std::string& snapshots_dir) {
    const TransferModel model = load_model(model_path);
    const Instruction z_x = parse(instruction_text);

    std::vector<std::string> files;
    if (!fs::is_directory(snapshots_dir))
        throw MissingArtifact("snapshot directory not found: " + snapshots_dir);
    for (const auto& entry : fs::directory_iterator(snapshots_dir)) {
        if (entry.path().extension() == ".snap") files.push_back(entry.path().string());
    }
    if (files.empty()) throw MissingArtifact("no .snap files in " + snapshots_dir);
    std::sort(files.begin(), files.end());

    std::vector<Instruction> labels;
    for (const std::string& file : files) {
        const Instruction instr = load_snapshot(file).instruction;
        if (std::find(labels.begin(), labels.end(), instr) == labels.end()) labels.push_back(instr);
    }
    return select_best(model, z_x, labels);
}

std::string rollout_trajectory(const RunConfig& cfg, const Instruction& task, std::uint64_t seed,
                               bool render_start) {
    Rng rng(seed);
    GridState state = reset(cfg.env, task, rng);
    std::string out;
    if (render_start) out += render_text(cfg.env, state);

    const auto plan = shortest_plan(cfg.env, state);
    if (!plan) {
        out += "{\"unreachable\":true}\n";
        return out;
    }
    for (Action action : *plan) {
        SeedChain hash;
        hash.mix(state_key(state));
        const StepResult r = step(cfg.env, state, action);
        ordered_json line;
        line["state_hash"] = hash.value();
        line["action"] = static_cast<int>(action);
        line["reward"] = r.reward;
        line["done"] = r.done;
        out += line.dump() + "\n";
    }
    return out;
}

}  // namespace taskadapt
