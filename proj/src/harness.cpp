#include "remul/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

#include "remul/answer_sft.hpp"
#include "remul/checkpoint.hpp"
#include "remul/datasets.hpp"
#include "remul/endpoint.hpp"
#include "remul/error.hpp"
#include "remul/faithfulness_eval.hpp"
#include "remul/grpo.hpp"
#include "remul/listeners.hpp"
#include "remul/policy.hpp"
#include "remul/rewards.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace remul {

// ---------------------------------------------------------------------------
// Config

namespace {

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

RunConfig from_stream(std::istream& in) {
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    RunConfig c;
    for (const auto& [section, body] : tree) {
        if (body.empty()) {
            c.set(section, trim(body.data()));
            continue;
        }
        for (const auto& [key, value] : body) c.set(section + "." + key, trim(value.data()));
    }
    return c;
}

}  // namespace

RunConfig RunConfig::from_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
    RunConfig c = from_stream(in);
    c.base_dir = c.has("run.base_dir") ? fs::path(c.get("run.base_dir")) : fs::absolute(path).parent_path();
    return c;
}

RunConfig RunConfig::from_string(const std::string& text) {
    std::istringstream in(text);
    RunConfig c = from_stream(in);
    c.base_dir = fs::current_path();
    return c;
}

std::string RunConfig::get(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

double RunConfig::get_double(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    try {
        std::size_t used = 0;
        const double v = std::stod(get(key), &used);
        if (used != get(key).size()) throw std::invalid_argument(key);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' is not a number: '" + get(key) + "'");
    }
}

long long RunConfig::get_int(const std::string& key, long long fallback) const {
    if (!has(key)) return fallback;
    try {
        std::size_t used = 0;
        const long long v = std::stoll(get(key), &used);
        if (used != get(key).size()) throw std::invalid_argument(key);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' is not an integer: '" + get(key) + "'");
    }
}

std::vector<std::string> RunConfig::get_list(const std::string& key, const std::string& fallback) const {
    std::vector<std::string> out;
    std::stringstream ss(get(key, fallback));
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::string RunConfig::to_ini() const {
    std::map<std::string, std::vector<std::pair<std::string, std::string>>> sections;
    std::vector<std::pair<std::string, std::string>> loose;
    for (const auto& [k, v] : values_) {
        const auto dot = k.find('.');
        if (dot == std::string::npos) {
            loose.emplace_back(k, v);
        } else {
            sections[k.substr(0, dot)].emplace_back(k.substr(dot + 1), v);
        }
    }
    std::string out;
    for (const auto& [k, v] : loose) out += k + " = " + v + "\n";
    for (const auto& [name, entries] : sections) {
        if (!out.empty()) out += "\n";
        out += "[" + name + "]\n";
        for (const auto& [k, v] : entries) out += k + " = " + v + "\n";
    }
    return out;
}

void apply_overrides(RunConfig& config, const Overrides& o) {
    if (o.seed) config.set("run.seed", std::to_string(*o.seed));
    if (o.out) config.set("run.out", *o.out);
    if (o.datasets) config.set("data.datasets", *o.datasets);
    if (o.metrics) config.set("eval.metrics", *o.metrics);
    if (o.variant) config.set("grpo.variant", *o.variant);
}

std::string make_run_id(const std::string& command, const RunConfig& config) {
    RunConfig identity = config;  // where a run is stored is not part of what it is
    identity.set("run.out", "");
    identity.set("run.base_dir", "");
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(stable_hash(command + "\n" + identity.to_ini())));
    return command + "-" + std::string(buf, 12);
}

// ---------------------------------------------------------------------------
// Shared plumbing

namespace {

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string opt_num(const std::optional<double>& v) { return v ? num(*v) : std::string("null"); }

std::uint64_t run_seed(const RunConfig& c) {
    const long long s = c.get_int("run.seed", 0);
    if (s < 0) throw ConfigError("run.seed must be non-negative");
    return static_cast<std::uint64_t>(s);
}

fs::path resolve(const RunConfig& c, const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() ? path : c.base_dir / path;
}

fs::path out_root(const RunConfig& c) { return resolve(c, c.get("run.out", "runs")); }

struct SummaryRow {
    std::string dataset, metric, value;
    std::size_t denominator = 0;
    std::size_t excluded = 0;
};

std::string summary_csv(const std::vector<SummaryRow>& rows) {
    std::string out = "dataset,metric,value,denominator,excluded\n";
    for (const auto& r : rows) {
        out += r.dataset + "," + r.metric + "," + r.value + "," + std::to_string(r.denominator) + "," +
               std::to_string(r.excluded) + "\n";
    }
    return out;
}

std::string summary_markdown(const std::string& run_id, const std::vector<SummaryRow>& rows) {
    std::string out = "# " + run_id + "\n\n| dataset | metric | value | n | excluded |\n|---|---|---|---|---|\n";
    for (const auto& r : rows) {
        out += "| " + r.dataset + " | " + r.metric + " | " + r.value + " | " + std::to_string(r.denominator) + " | " +
               std::to_string(r.excluded) + " |\n";
    }
    return out;
}

SummaryRow pct_row(const std::string& dataset, const std::string& metric, const Percentage& p) {
    return {dataset, metric, opt_num(p.value), p.denominator, p.excluded};
}

// Single writer for one run directory. Files are created once; an existing
// run is never overwritten.
class RunWriter {
public:
    RunWriter(const RunConfig& config, const std::string& command)
        : run_id_(make_run_id(command, config)), dir_(out_root(config) / run_id_) {
        if (fs::exists(dir_ / "run.json")) {
            throw PreconditionError("run '" + run_id_ + "' already exists in " + dir_.parent_path().string());
        }
        fs::create_directories(dir_ / "checkpoints");
        meta_ = {{"run_id", run_id_}, {"command", command}, {"seed", run_seed(config)}, {"artifacts", json::array()},
                 {"checkpoints", json::array()}};
        RunConfig snapshot = config;  // relative paths keep resolving from the snapshot
        if (!snapshot.has("run.base_dir")) snapshot.set("run.base_dir", config.base_dir.string());
        write("config.ini", snapshot.to_ini());
    }

    const std::string& run_id() const { return run_id_; }
    const fs::path& dir() const { return dir_; }

    void write(const std::string& name, const std::string& text) {
        if (fs::exists(dir_ / name)) throw PreconditionError("artifact '" + name + "' already written");
        write_text(dir_ / name, text);
        meta_["artifacts"].push_back(name);
    }
    void checkpoint(const std::string& name, const std::string& text) {
        write("checkpoints/" + name, text);
        meta_["checkpoints"].push_back("checkpoints/" + name);
    }

    RunRecord finish(const std::vector<SummaryRow>& rows) {
        const std::string csv = summary_csv(rows);
        write("summary.csv", csv);
        write("summary.md", summary_markdown(run_id_, rows));
        write_text(dir_ / "run.json", meta_.dump(2) + "\n");
        return {run_id_, dir_, csv};
    }

private:
    std::string run_id_;
    fs::path dir_;
    json meta_;
};

struct NamedDataset {
    std::string name;
    std::vector<QAItem> items;
};

std::vector<NamedDataset> load_datasets(const RunConfig& c, std::uint64_t seed) {
    const auto names = c.get_list("data.datasets", "synthetic");
    if (names.empty()) throw ConfigError("no datasets selected");
    std::vector<NamedDataset> out;
    for (const auto& name : names) {
        if (name == "synthetic") {
            const long long size = c.get_int("data.synthetic_size", 64);
            if (size < 1) throw ConfigError("data.synthetic_size must be positive");
            const auto task = make_synthetic_task(static_cast<std::size_t>(size),
                                                  c.get_double("data.executable_ratio", 0.5),
                                                  static_cast<std::uint64_t>(c.get_int("data.synthetic_seed",
                                                                                       static_cast<long long>(seed))));
            out.push_back({name, task.items});
            continue;
        }
        DatasetSpec spec;
        spec.name = name;
        std::string kind = c.get("data." + name + "_kind", name);
        if (kind.size() > 6 && kind.compare(kind.size() - 6, 6, "_train") == 0) {
            kind.resize(kind.size() - 6);
            spec.split = "train";
        }
        spec.kind = dataset_kind_from_string(kind);
        if (!c.has("data." + name + "_path")) throw ConfigError("dataset '" + name + "' needs data." + name + "_path");
        const fs::path path = resolve(c, c.get("data." + name + "_path"));
        if (!fs::exists(path)) throw ConfigError("dataset file '" + path.string() + "' does not exist");
        spec.path = path.string();
        spec.task_filter = c.get_list("data." + name + "_tasks");
        const bool full = c.get("data." + name + "_full", "false") == "true";
        if (c.has("data." + name + "_expected")) {
            spec.expected_count = static_cast<std::size_t>(c.get_int("data." + name + "_expected", 0));
        } else if (full) {
            spec.expected_count = reference_count(name);
            if (!spec.expected_count) throw ConfigError("no reference count for dataset '" + name + "'");
            if (name == "bbh_train" && spec.task_filter.empty()) spec.task_filter = bbh_training_tasks();
        }
        out.push_back({name, load_dataset(spec)});
    }
    return out;
}

std::vector<QAItem> concat(const std::vector<NamedDataset>& sets) {
    std::vector<QAItem> all;
    for (const auto& s : sets) all.insert(all.end(), s.items.begin(), s.items.end());
    return all;
}

// A path, or the id of a run under run.out.
fs::path checkpoint_file(const RunConfig& c) {
    const std::string ref = c.get("policy.checkpoint");
    fs::path p = resolve(c, ref);
    if (!fs::exists(p) && fs::is_directory(out_root(c) / ref)) p = out_root(c) / ref;
    if (fs::is_directory(p)) {
        if (fs::exists(p / "checkpoints" / "merged.json")) return p / "checkpoints" / "merged.json";
        p = p / "checkpoints" / "policy.json";
    }
    if (!fs::exists(p)) throw ConfigError("policy checkpoint '" + p.string() + "' does not exist");
    return p;
}

std::unique_ptr<Policy> make_policy(const RunConfig& c, std::uint64_t seed) {
    std::unique_ptr<Policy> policy;
    if (c.has("policy.checkpoint")) {
        policy = policy_from_json(read_text(checkpoint_file(c)));
    } else if (policy_kind_from_string(c.get("policy.kind", "template_policy")) == PolicyKind::template_policy) {
        policy = std::make_unique<TemplatePolicy>();
    } else {
        Tokenizer tok = Tokenizer::synthetic();
        TinyLMConfig cfg;
        cfg.vocab = static_cast<int>(tok.size());
        cfg.d_model = static_cast<int>(c.get_int("policy.d_model", 16));
        cfg.max_len = static_cast<int>(c.get_int("policy.max_len", 160));
        if (cfg.d_model < 1 || cfg.max_len < 8) throw ConfigError("policy.d_model / policy.max_len out of range");
        policy = std::make_unique<TinyLMPolicy>(TinyLM(cfg, derive_seed(seed, 0x70)), std::move(tok),
                                                static_cast<int>(c.get_int("policy.max_new_tokens", 24)));
    }
    Decoding d = policy->decoding();
    d.temperature = c.get_double("policy.temperature", d.temperature);
    d.top_p = c.get_double("policy.top_p", d.top_p);
    d.repetition_penalty = c.get_double("policy.repetition_penalty", d.repetition_penalty);
    if (!d.valid()) throw ConfigError("policy decoding values must be positive");
    policy->set_decoding(d);
    return policy;
}

EndpointConfig endpoint_config(const RunConfig& c, const std::string& section) {
    EndpointConfig e;
    e.base_url = c.get(section + ".base_url", e.base_url);
    e.path = c.get(section + ".path", e.path);
    e.api_key_env = c.get(section + ".api_key_env");
    e.timeout_seconds = c.get_double(section + ".timeout_seconds", e.timeout_seconds);
    e.retries = static_cast<int>(c.get_int(section + ".retries", e.retries));
    return e;
}

ListenerPool make_pool(const RunConfig& c) {
    const ListenerBackend backend = listener_backend_from_string(c.get("pool.backend", "scripted"));
    const long long count = c.get_int("pool.listeners", 3);
    if (backend == ListenerBackend::scripted) {
        if (count < 1) throw ConfigError("pool.listeners must be positive");
        return scripted_pool(static_cast<std::size_t>(count));
    }
    std::vector<ListenerSpec> specs;
    if (backend == ListenerBackend::endpoint) {
        const auto models = c.get_list("pool.models");
        if (models.empty()) throw ConfigError("endpoint pool needs pool.models");
        for (std::size_t i = 0; i < models.size(); ++i) {
            EndpointConfig e = endpoint_config(c, "pool");
            e.model = models[i];
            ListenerSpec s;
            s.name = models[i];
            s.backend = backend;
            s.decoding = default_listener_decoding(i);
            s.model = std::make_shared<EndpointModel>(e, models[i]);
            specs.push_back(std::move(s));
        }
    } else {
        if (count < 1) throw ConfigError("pool.listeners must be positive");
        for (long long i = 0; i < count; ++i) {
            ListenerSpec s;
            s.name = "toy-" + std::to_string(i);
            s.backend = backend;
            s.decoding = default_listener_decoding(static_cast<std::size_t>(i));
            s.model = std::make_shared<TemplatePolicy>(std::vector<double>{}, s.name);
            specs.push_back(std::move(s));
        }
    }
    return ListenerPool(std::move(specs));
}

GrpoConfig grpo_config(const RunConfig& c) {
    GrpoConfig g;
    g.learning_rate = c.get_double("grpo.learning_rate", g.learning_rate);
    g.batch_items = static_cast<std::size_t>(std::max<long long>(0, c.get_int("grpo.batch_items", 64)));
    g.entropy_coef = c.get_double("grpo.entropy_coef", g.entropy_coef);
    g.kl_coef = c.get_double("grpo.kl_coef", g.kl_coef);
    g.group_size = static_cast<std::size_t>(std::max<long long>(0, c.get_int("grpo.group_size", 5)));
    g.epochs = static_cast<int>(c.get_int("grpo.epochs", g.epochs));
    g.advantage_epsilon = c.get_double("grpo.advantage_epsilon", g.advantage_epsilon);
    g.clip_range = c.get_double("grpo.clip_range", g.clip_range);
    g.lambda = static_cast<int>(c.get_int("grpo.lambda", 0));
    g.max_steps = static_cast<std::size_t>(std::max<long long>(0, c.get_int("grpo.max_steps", 0)));
    g.split_mode = split_mode_from_string(c.get("grpo.split_mode", "newline"));
    g.validate();
    return g;
}

AdapterConfig adapter_config(const RunConfig& c) {
    AdapterConfig a;
    a.rank = static_cast<int>(c.get_int("adapter.rank", a.rank));
    a.scale = c.get_double("adapter.scale", a.scale);
    a.dropout = c.get_double("adapter.dropout", a.dropout);
    a.learning_rate = c.get_double("adapter.learning_rate", a.learning_rate);
    a.weight_decay = c.get_double("adapter.weight_decay", a.weight_decay);
    a.epochs = static_cast<int>(c.get_int("adapter.epochs", a.epochs));
    if (c.has("adapter.target_maps")) a.target_maps = c.get_list("adapter.target_maps");
    try {
        a.validate();
    } catch (const PreconditionError& e) {
        throw ConfigError(e.what());
    }
    return a;
}

double mean_of(const std::vector<StepStats>& steps, std::size_t from, std::size_t to, double StepStats::*field) {
    double s = 0.0;
    for (std::size_t i = from; i < to; ++i) s += steps[i].*field;
    return to > from ? s / static_cast<double>(to - from) : 0.0;
}

}  // namespace

// ---------------------------------------------------------------------------
// train

RunRecord cmd_train(const RunConfig& config) {
    const std::uint64_t seed = run_seed(config);
    const RewardVariant variant = reward_variant_from_string(config.get("grpo.variant", "faithfulness_only"));
    const GrpoConfig gcfg = grpo_config(config);
    const auto datasets = load_datasets(config, seed);
    const auto items = concat(datasets);
    // listeners are unused by correctness_only / hint_optimized; their settings are not validated
    const ListenerPool pool = uses_listeners(variant) ? make_pool(config) : ListenerPool{};
    auto policy = make_policy(config, seed);

    const TrainResult result = train(*policy, items, pool, variant, gcfg, seed);

    RunWriter w(config, "train");
    std::string curve = "step,variant,component,value\n";
    for (const auto& p : result.curve) {
        curve += std::to_string(p.step) + "," + p.variant + "," + p.component + "," + num(p.value) + "\n";
    }
    w.write("curve.csv", curve);
    std::string records;
    for (const auto& s : result.steps) {
        records += json{{"run_id", w.run_id()},    {"step", s.step},       {"mean_reward", s.mean_reward},
                        {"mean_r_match", s.mean_r_match}, {"accuracy", s.accuracy}, {"hint_rate", s.hint_rate},
                        {"mean_abs_advantage", s.mean_abs_advantage}, {"kl", s.kl}, {"entropy", s.entropy},
                        {"loss", s.loss}}
                       .dump() +
                   "\n";
    }
    w.write("records.jsonl", records);
    w.checkpoint("policy.json", policy_to_json(*policy));

    const auto& st = result.steps;
    const std::size_t window = std::min<std::size_t>(10, st.size());
    const std::string d = "train";
    std::vector<SummaryRow> rows{
        {d, "variant", std::string(to_string(variant)), st.size(), 0},
        {d, "steps", std::to_string(st.size()), st.size(), 0},
        {d, "initial_reward", num(mean_of(st, 0, window, &StepStats::mean_reward)), window, 0},
        {d, "final_reward", num(mean_of(st, st.size() - window, st.size(), &StepStats::mean_reward)), window, 0},
        {d, "initial_r_match", num(mean_of(st, 0, window, &StepStats::mean_r_match)), window, 0},
        {d, "final_r_match", num(mean_of(st, st.size() - window, st.size(), &StepStats::mean_r_match)), window, 0},
        {d, "final_accuracy", num(mean_of(st, st.size() - window, st.size(), &StepStats::accuracy)), window, 0},
    };
    if (const auto* t = dynamic_cast<const TemplatePolicy*>(policy.get())) {
        rows.push_back({d, "executable_mass", num(t->executable_mass()), 1, 0});
    }
    return w.finish(rows);
}

// ---------------------------------------------------------------------------
// sft

RunRecord cmd_sft(const RunConfig& config) {
    const std::uint64_t seed = run_seed(config);
    const AdapterConfig acfg = adapter_config(config);
    const auto datasets = load_datasets(config, seed);
    const auto items = concat(datasets);
    if (items.empty()) throw PreconditionError("answer finetuning needs items");
    auto policy = make_policy(config, seed);
    auto* lm = dynamic_cast<TinyLMPolicy*>(policy.get());
    if (!lm) throw PreconditionError("answer finetuning needs a tiny_autoregressive policy");

    const auto examples = build_sft_examples(*lm, items, derive_seed(seed, 0x5f7));
    TinyLM model = lm->model();
    model.detach_adapter();
    if (config.has("adapter.init")) {
        const fs::path p = resolve(config, config.get("adapter.init"));
        if (!fs::exists(p)) throw ConfigError("adapter file '" + p.string() + "' does not exist");
        model.attach_adapter(acfg, bundle_from_json(read_text(p)));
    } else {
        model.attach_adapter(acfg, derive_seed(seed, 0xada));
    }
    const double before = answer_accuracy(model, lm->tokenizer(), examples, items);
    const SftStats stats = train_answer_adapter(model, to_batch(examples), acfg, seed);
    const double after = answer_accuracy(model, lm->tokenizer(), examples, items);

    TinyLM base = model;
    base.detach_adapter();
    const TinyLM merged = merge_adapter(base, model.adapter(), acfg);
    double max_diff = 0.0;
    for (const auto& ex : examples) {
        max_diff = std::max(max_diff, (merged.forward(ex.tokens) - model.forward(ex.tokens)).cwiseAbs().maxCoeff());
    }
    TinyLMPolicy merged_policy(merged, lm->tokenizer(), lm->max_new_tokens(), lm->name() + "+answer");
    merged_policy.set_decoding(lm->decoding());

    RunWriter w(config, "sft");
    std::string records;
    for (std::size_t e = 0; e < stats.epoch_loss.size(); ++e) {
        records += json{{"run_id", w.run_id()}, {"epoch", e}, {"loss", stats.epoch_loss[e]}}.dump() + "\n";
    }
    w.write("records.jsonl", records);
    w.checkpoint("adapter.json", bundle_to_json(model.adapter()));
    w.checkpoint("merged.json", policy_to_json(merged_policy));

    const std::string d = "sft";
    const std::size_t n = examples.size();
    return w.finish({
        {d, "epochs", std::to_string(acfg.epochs), n, 0},
        {d, "accuracy_before", num(100.0 * before), n, 0},
        {d, "accuracy_after", num(100.0 * after), n, 0},
        {d, "final_loss", stats.epoch_loss.empty() ? "null" : num(stats.epoch_loss.back()), n, 0},
        {d, "merge_max_abs_diff", num(max_diff), n, 0},
        {d, "base_checksum_unchanged", stats.base_checksum_before == stats.base_checksum_after ? "1" : "0", 1, 0},
    });
}

// ---------------------------------------------------------------------------
// eval

namespace {

const std::vector<std::string>& known_metrics() {
    static const std::vector<std::string> m{"accuracy",   "hint", "sycophancy", "early_answering", "adding_mistakes",
                                            "backtracking", "legibility", "ece", "solvability", "length"};
    return m;
}

struct ItemEval {
    std::string id;
    ReasoningTrace trace;
    bool degenerate = false;
    bool correct = false;
    std::optional<HintResult> hint;
    std::optional<AocCurve> early, mistakes;
    std::size_t backtracks = 0;
    std::optional<LegibilityResult> legibility;
    std::optional<double> confidence;
    std::optional<SolvabilityRecord> solvability;
    std::size_t length = 0;
};

ItemEval evaluate_item(const TextModel& speaker, const TextModel& rater, const QAItem& item,
                       const std::set<std::string>& metrics, SplitMode mode, std::uint64_t seed) {
    ItemEval r;
    r.id = item.id;
    const std::string output =
        speaker.generate(speaker_request(build_prompt(item), "", derive_seed(seed, stable_hash(item.id), 0xe7a1)));
    try {
        r.trace = parse_trace(output, item.options, mode);
    } catch (const MalformedTrace&) {
        r.trace.raw = output;
        r.degenerate = true;
    }
    if (r.trace.n() == 0 || !r.trace.answer.parsed()) r.degenerate = true;
    r.correct = r.trace.answer.parsed() && r.trace.answer.value() == item.gold;
    if (metrics.count("hint") || metrics.count("sycophancy")) r.hint = hint_protocol(speaker, item, r.trace.answer, seed);
    if (!r.degenerate && metrics.count("early_answering")) r.early = early_answering_aoc(speaker, item, r.trace, seed);
    if (!r.degenerate && metrics.count("adding_mistakes")) {
        r.mistakes = mistake_injection_aoc(speaker, item, r.trace, RuleMistakeGenerator{}, seed);
    }
    r.backtracks = backtracking_frequency(r.trace.thinking);
    if (!r.degenerate && metrics.count("legibility")) {
        r.legibility = legibility_score(rater, r.trace, derive_seed(seed, stable_hash(item.id), 0x1e9));
    }
    r.confidence = parse_confidence(r.trace.answer_text);
    if (metrics.count("solvability")) r.solvability = solvability_estimate(speaker, item, r.correct, seed);
    r.length = reasoning_length(r.trace);
    return r;
}

json item_json(const std::string& run_id, const std::string& dataset, const QAItem& item, const ItemEval& r) {
    json j{{"run_id", run_id}, {"dataset", dataset},         {"id", r.id},
           {"gold", item.gold}, {"answer", r.trace.answer.str()}, {"correct", r.correct},
           {"degenerate", r.degenerate}, {"steps", r.trace.n()}, {"backtracking", r.backtracks},
           {"length", r.length}};
    if (r.hint) {
        j["hint"] = {{"original", r.hint->original_answer.str()}, {"hinted", r.hint->hinted_answer.str()},
                     {"changed", r.hint->changed},                {"cited", r.hint->cited},
                     {"excluded", r.hint->excluded}};
    }
    if (r.early) j["early_answering"] = {{"rates", r.early->rates}, {"aoc", r.early->aoc}};
    if (r.mistakes) j["adding_mistakes"] = {{"rates", r.mistakes->rates}, {"aoc", r.mistakes->aoc}};
    if (r.legibility) j["legibility"] = r.legibility->rating ? json(*r.legibility->rating) : json(nullptr);
    j["confidence"] = r.confidence ? json(*r.confidence) : json(nullptr);
    if (r.solvability) {
        j["solvability"] = {{"predicted", r.solvability->predicted ? json(*r.solvability->predicted) : json(nullptr)},
                            {"solved", r.solvability->solved}};
    }
    return j;
}

}  // namespace

RunRecord cmd_eval(const RunConfig& config) {
    const std::uint64_t seed = run_seed(config);
    const auto selected = config.get_list("eval.metrics", "accuracy,hint,sycophancy,early_answering,adding_mistakes,"
                                                          "backtracking,legibility,ece,solvability,length");
    if (selected.empty()) throw ConfigError("no metrics selected");
    std::set<std::string> metrics;
    for (const auto& m : selected) {
        if (std::find(known_metrics().begin(), known_metrics().end(), m) == known_metrics().end()) {
            throw ConfigError("unknown metric '" + m + "'");
        }
        metrics.insert(m);
    }
    const SplitMode mode = split_mode_from_string(config.get("eval.split_mode", "newline"));
    const auto datasets = load_datasets(config, seed);
    const auto policy = make_policy(config, seed);
    std::unique_ptr<TextModel> rater;
    if (config.get("rater.backend", "scripted") == "endpoint") {
        EndpointConfig e = endpoint_config(config, "rater");
        e.model = config.get("rater.model");
        if (e.model.empty()) throw ConfigError("endpoint rater needs rater.model");
        rater = std::make_unique<EndpointModel>(e, e.model);
    } else {
        rater = std::make_unique<ScriptedRater>();
    }

    RunWriter w(config, "eval");
    std::string records;
    std::string curves = "dataset,kind,fraction,rate\n";
    std::vector<SummaryRow> rows;
    for (const auto& ds : datasets) {
        std::vector<ItemEval> evals(ds.items.size());
        std::vector<std::exception_ptr> errors(ds.items.size());
        const auto n = static_cast<std::ptrdiff_t>(ds.items.size());
#pragma omp parallel for schedule(dynamic)
        for (std::ptrdiff_t i = 0; i < n; ++i) {
            const auto k = static_cast<std::size_t>(i);
            try {
                evals[k] = evaluate_item(*policy, *rater, ds.items[k], metrics, mode, seed);
            } catch (...) {
                errors[k] = std::current_exception();
            }
        }
        for (auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
        // fold in item-id order
        std::vector<std::size_t> order(evals.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return evals[a].id < evals[b].id; });

        std::size_t correct = 0, bt_total = 0, len_total = 0, degenerate = 0;
        std::vector<HintResult> hints;
        std::vector<AocCurve> early, mistakes;
        std::vector<LegibilityResult> legibility;
        std::vector<double> confs;
        std::vector<char> conf_correct;
        std::vector<SolvabilityRecord> solv;
        for (std::size_t k : order) {
            const auto& r = evals[k];
            records += item_json(w.run_id(), ds.name, ds.items[k], r).dump() + "\n";
            correct += r.correct ? 1 : 0;
            degenerate += r.degenerate ? 1 : 0;
            bt_total += r.backtracks;
            len_total += r.length;
            if (r.hint) hints.push_back(*r.hint);
            if (r.early) early.push_back(*r.early);
            if (r.mistakes) mistakes.push_back(*r.mistakes);
            if (r.legibility) legibility.push_back(*r.legibility);
            if (r.confidence) {
                confs.push_back(*r.confidence);
                conf_correct.push_back(r.correct ? 1 : 0);
            }
            if (r.solvability) solv.push_back(*r.solvability);
        }
        const std::size_t items = evals.size();
        const std::string& d = ds.name;
        if (metrics.count("accuracy")) rows.push_back(pct_row(d, "accuracy", make_percentage(correct, items)));
        if (metrics.count("hint")) rows.push_back(pct_row(d, "hint_usage", hint_usage(hints)));
        if (metrics.count("sycophancy")) rows.push_back(pct_row(d, "sycophancy_rate", sycophancy_rate(hints)));
        auto curve_rows = [&](const std::vector<AocCurve>& cs, const std::string& metric) {
            if (cs.empty()) {
                rows.push_back({d, metric, "null", 0, items});
                return;
            }
            const AocCurve m = mean_curve(cs);
            rows.push_back({d, metric, num(m.aoc), cs.size(), items - cs.size()});
            for (std::size_t i = 0; i < m.fractions.size(); ++i) {
                curves += d + "," + std::string(to_string(m.kind)) + "," + num(m.fractions[i]) + "," + num(m.rates[i]) +
                          "\n";
            }
        };
        if (metrics.count("early_answering")) curve_rows(early, "early_answering_aoc");
        if (metrics.count("adding_mistakes")) curve_rows(mistakes, "adding_mistakes_aoc");
        if (metrics.count("backtracking")) {
            rows.push_back({d, "backtracking_mean",
                            items ? num(static_cast<double>(bt_total) / static_cast<double>(items)) : "null", items, 0});
        }
        if (metrics.count("legibility")) {
            Percentage p = legibility_corpus(legibility);
            p.excluded += items - legibility.size();
            rows.push_back(pct_row(d, "legibility", p));
        }
        if (metrics.count("ece")) {
            rows.push_back({d, "ece", opt_num(ece(confs, conf_correct)), confs.size(), items - confs.size()});
        }
        if (metrics.count("solvability")) rows.push_back(pct_row(d, "solvability", solvability_score(solv)));
        if (metrics.count("length")) {
            rows.push_back({d, "reasoning_length_mean",
                            items ? num(static_cast<double>(len_total) / static_cast<double>(items)) : "null", items,
                            0});
        }
        rows.push_back({d, "degenerate_traces", std::to_string(degenerate), items, 0});
    }
    w.write("records.jsonl", records);
    w.write("curves.csv", curves);
    return w.finish(rows);
}

// ---------------------------------------------------------------------------
// report

namespace {

struct LoadedRun {
    std::string id;
    fs::path dir;
    std::vector<SummaryRow> rows;
};

LoadedRun load_run(const std::string& ref, const fs::path& root) {
    fs::path dir = root / ref;
    if (!fs::exists(dir / "summary.csv") && fs::exists(fs::path(ref) / "summary.csv")) dir = ref;
    if (!fs::exists(dir / "summary.csv")) throw UnknownRun("unknown run '" + ref + "'");
    LoadedRun run;
    run.id = dir.filename().string();
    run.dir = dir;
    std::istringstream in(read_text(dir / "summary.csv"));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (f.size() != 5) throw ConfigError("malformed summary row in " + (dir / "summary.csv").string());
        run.rows.push_back({f[0], f[1], f[2], std::stoul(f[3]), std::stoul(f[4])});
    }
    return run;
}

std::optional<double> as_number(const std::string& s) {
    if (s == "null") return std::nullopt;
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') return std::nullopt;
    return v;
}

}  // namespace

ReportResult cmd_report(const std::vector<std::string>& runs, const fs::path& root) {
    if (runs.empty()) throw ConfigError("report needs at least one run id");
    std::vector<LoadedRun> loaded;
    for (const auto& r : runs) loaded.push_back(load_run(r, root));

    // row keys in first-seen order
    std::vector<std::pair<std::string, std::string>> keys;
    for (const auto& run : loaded) {
        for (const auto& row : run.rows) {
            const std::pair<std::string, std::string> k{row.dataset, row.metric};
            if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
        }
    }
    auto lookup = [](const LoadedRun& run, const std::pair<std::string, std::string>& k) -> const SummaryRow* {
        for (const auto& row : run.rows) {
            if (row.dataset == k.first && row.metric == k.second) return &row;
        }
        return nullptr;
    };

    std::string md = "| dataset | metric |";
    std::string sep = "|---|---|";
    std::string csv = "dataset,metric";
    for (const auto& run : loaded) {
        md += " " + run.id + " | n |";
        sep += "---|---|";
        csv += "," + run.id + "," + run.id + ":n";
    }
    for (std::size_t i = 1; i < loaded.size(); ++i) {
        md += " delta% " + loaded[i].id + " |";
        sep += "---|";
        csv += ",delta%:" + loaded[i].id;
    }
    md += "\n" + sep + "\n";
    csv += "\n";
    for (const auto& k : keys) {
        md += "| " + k.first + " | " + k.second + " |";
        csv += k.first + "," + k.second;
        for (const auto& run : loaded) {
            const SummaryRow* row = lookup(run, k);
            const std::string v = row ? row->value : "-";
            const std::string n = row ? std::to_string(row->denominator) : "-";
            md += " " + v + " | " + n + " |";
            csv += "," + v + "," + n;
        }
        const SummaryRow* first = lookup(loaded.front(), k);
        for (std::size_t i = 1; i < loaded.size(); ++i) {
            const SummaryRow* row = lookup(loaded[i], k);
            std::optional<double> delta;
            if (first && row) {
                const auto a = as_number(first->value), b = as_number(row->value);
                if (a && b) delta = percent_delta(*a, *b);
            }
            md += " " + opt_num(delta) + " |";
            csv += "," + opt_num(delta);
        }
        md += "\n";
        csv += "\n";
    }

    std::string curves = "run_id,dataset,kind,fraction,rate\n";
    for (const auto& run : loaded) {
        for (const char* name : {"curves.csv", "curve.csv"}) {
            if (!fs::exists(run.dir / name)) continue;
            std::istringstream in(read_text(run.dir / name));
            std::string line;
            std::getline(in, line);
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                if (std::string(name) == "curve.csv") {
                    // step,variant,component,value -> reward curve rows
                    std::stringstream ss(line);
                    std::string step, variant, component, value;
                    std::getline(ss, step, ',');
                    std::getline(ss, variant, ',');
                    std::getline(ss, component, ',');
                    std::getline(ss, value, ',');
                    curves += run.id + ",train," + variant + ":" + component + "," + step + "," + value + "\n";
                } else {
                    curves += run.id + "," + line + "\n";
                }
            }
        }
    }

    std::string stem;
    for (const auto& run : loaded) stem += (stem.empty() ? "" : "_vs_") + run.id;
    const fs::path dir = root / "reports";
    fs::create_directories(dir);
    ReportResult out;
    out.table = md;
    out.csv = dir / (stem + ".csv");
    out.curves = dir / (stem + "-curves.csv");
    write_text(out.csv, csv);
    write_text(dir / (stem + ".md"), md);
    write_text(out.curves, curves);
    return out;
}

std::string error_record(const std::exception& e) {
    json j;
    if (const auto* err = dynamic_cast<const Error*>(&e)) {
        j["error"] = err->kind();
    } else {
        j["error"] = "InternalError";
    }
    j["message"] = e.what();
    return j.dump();
}

}  // namespace remul
