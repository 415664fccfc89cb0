#include "fcdst/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iostream>
#include <iterator>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fcdst/backend.hpp"
#include "fcdst/eval.hpp"
#include "fcdst/export.hpp"
#include "fcdst/parse.hpp"
#include "fcdst/prompt.hpp"
#include "fcdst/tracker.hpp"

namespace fcdst::cli {

namespace {

using json = nlohmann::json;

std::string dump_line(const json& j) { return j.dump(-1, ' ', false, json::error_handler_t::replace); }

std::string dashed(std::string name) {
    std::replace(name.begin(), name.end(), '_', '-');
    return name;
}

/// Config files are either a JSON object or TOML-like `key = value` lines.
/// Keys may use '_' or '-'; values given on the command line take precedence.
class FlexibleConfig : public CLI::ConfigTOML {
public:
    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
        const std::string text{std::istreambuf_iterator<char>(input), std::istreambuf_iterator<char>()};
        const auto first = text.find_first_not_of(" \t\r\n");
        std::vector<CLI::ConfigItem> items;
        if (first != std::string::npos && text[first] == '{') {
            auto doc = json::parse(text, nullptr, false);
            if (doc.is_discarded() || !doc.is_object()) throw CLI::ConfigError("config file is not a valid JSON object");
            for (const auto& [key, value] : doc.items()) {
                CLI::ConfigItem item;
                item.name = dashed(key);
                auto add = [&](const json& v) {
                    if (v.is_string()) {
                        item.inputs.push_back(v.get<std::string>());
                    } else if (v.is_boolean() || v.is_number()) {
                        item.inputs.push_back(v.dump());
                    } else {
                        throw CLI::ConfigError("config key '" + key + "' must hold a scalar or a list of scalars");
                    }
                };
                if (value.is_array()) {
                    for (const auto& v : value) add(v);
                } else {
                    add(value);
                }
                items.push_back(std::move(item));
            }
            return items;
        }
        std::istringstream stream(text);
        items = CLI::ConfigTOML::from_config(stream);
        for (auto& item : items) item.name = dashed(item.name);
        return items;
    }
};

bool path_exists(const std::filesystem::path& p) { return !p.empty() && std::filesystem::exists(p); }

std::shared_ptr<const SchemaCatalog> load_catalog_for(const RunConfig& cfg) {
    if (cfg.catalog.empty()) throw UsageError("--catalog is required");
    if (!path_exists(cfg.catalog)) throw UsageError("catalog " + cfg.catalog.string() + " does not exist");
    try {
        return std::make_shared<const SchemaCatalog>(
            load_catalog_file(cfg.catalog, catalog_format_from_string(cfg.catalog_format)));
    } catch (const ValidationError& e) {
        throw UsageError(e.what());
    }
}

TemplateRegistry load_templates(const std::filesystem::path& extra) {
    auto builtins = builtin_templates();
    if (extra.empty()) return builtins;
    if (!path_exists(extra)) throw UsageError("templates file " + extra.string() + " does not exist");
    auto file = TemplateRegistry::from_file(extra);
    std::vector<ChatTemplate> merged;
    for (const auto& name : file.names()) merged.push_back(file.at(name));
    for (const auto& name : builtins.names())
        if (!file.find(name)) merged.push_back(builtins.at(name));
    return TemplateRegistry(std::move(merged));
}

ChatTemplate pick_template(const std::filesystem::path& extra, const std::string& name) {
    auto registry = load_templates(extra);
    const auto* tmpl = registry.find(name);
    if (!tmpl) {
        std::string known;
        for (const auto& n : registry.names()) known += (known.empty() ? "" : ", ") + n;
        throw UsageError("unknown template '" + name + "' (known: " + known + ")");
    }
    return *tmpl;
}

bool gold_oracle(const RunConfig& cfg) { return cfg.oracle_domain == "gold"; }

/// Tracker settings without the backend, which is created only after everything else loaded.
TrackerConfig tracker_config(const RunConfig& cfg, std::shared_ptr<const SchemaCatalog> catalog) {
    TrackerConfig t;
    t.catalog = std::move(catalog);
    t.prompt.mode = pipeline_mode_from_string(cfg.mode);
    t.prompt.spec_rendering = cfg.spec_rendering == "text" ? SpecRendering::text : SpecRendering::json;
    t.prompt.n_shot = cfg.n_shot;
    t.prompt.include_prev_calls = !cfg.no_prev_calls;
    t.prompt.max_context_units = cfg.max_context_units;
    if (!cfg.oracle_domain.empty() && !gold_oracle(cfg)) {
        auto name = snap_function_name(cfg.oracle_domain, *t.catalog);
        if (!name) throw UsageError("--oracle-domain '" + cfg.oracle_domain + "' is not a catalog function");
        t.prompt.oracle_domain = name;
    }
    if (t.prompt.mode == PipelineMode::monolithic && !cfg.oracle_domain.empty())
        throw UsageError("--oracle-domain only applies to decomposed mode");
    t.chat_template = pick_template(cfg.templates, cfg.template_name);
    if (!cfg.examples.empty()) {
        if (!std::filesystem::is_directory(cfg.examples))
            throw UsageError("examples directory " + cfg.examples.string() + " does not exist");
        t.examples = load_examples_dir(cfg.examples, *t.catalog);
    } else if (cfg.n_shot > 0) {
        throw UsageError("--n-shot " + std::to_string(cfg.n_shot) + " needs --examples");
    }
    t.fallback = domain_fallback_from_string(cfg.fallback);
    t.params.temperature = cfg.temperature;
    t.params.top_p = cfg.top_p;
    t.params.max_tokens = cfg.max_tokens;
    t.model_id = cfg.model;
    t.raw_completion = cfg.raw_completion;
    t.validation.snap_enum = cfg.snap_enum;
    return t;
}

void validate_tracker(TrackerConfig& t) {
    // validate() insists on a backend; a placeholder keeps the check purely about configuration.
    struct Unused final : Backend {
        CompletionResult complete(const CompletionRequest&) override { throw PreconditionError("unused backend"); }
    };
    auto held = std::move(t.backend);
    t.backend = std::make_shared<Unused>();
    try {
        t.validate();
    } catch (const ValidationError& e) {
        throw UsageError(e.what());
    }
    t.backend = std::move(held);
}

BackendHandle live_backend(const RunConfig& cfg) {
    HttpBackendOptions options;
    options.base_url = cfg.base_url;
    options.api_key = cfg.api_key;
    if (options.api_key.empty())
        if (const char* env = std::getenv(kApiKeyEnv)) options.api_key = env;
    options.raw_completion = cfg.raw_completion;
    options.timeout = std::chrono::seconds(cfg.timeout_seconds);
    options.retry.max_retries = cfg.max_retries;
    return std::make_shared<OpenAICompatibleBackend>(options);
}

BackendHandle make_backend(const RunConfig& cfg) {
    if (cfg.backend == "mock") return ScriptedBackend::from_file(cfg.mock_script);
    if (cfg.backend == "replay") return std::make_shared<ReplayBackend>(cfg.store);
    if (cfg.backend == "record") {
        BackendHandle inner = cfg.mock_script.empty() ? live_backend(cfg) : ScriptedBackend::from_file(cfg.mock_script);
        return record_mode(std::move(inner), cfg.store);
    }
    return live_backend(cfg);
}

void check_backend_settings(const RunConfig& cfg) {
    if (cfg.backend == "mock" && cfg.mock_script.empty()) throw UsageError("--backend mock needs --mock-script");
    if (!cfg.mock_script.empty() && !path_exists(cfg.mock_script))
        throw UsageError("mock script " + cfg.mock_script.string() + " does not exist");
    if ((cfg.backend == "replay" || cfg.backend == "record") && cfg.store.empty())
        throw UsageError("--backend " + cfg.backend + " needs --store");
    if (cfg.backend == "replay" && !path_exists(cfg.store))
        throw UsageError("replay store " + cfg.store.string() + " does not exist");
}

Dataset load_dataset(const RunConfig& cfg, const SchemaCatalog& catalog) {
    if (cfg.dataset.empty()) throw UsageError("--dataset is required");
    if (!path_exists(cfg.dataset)) throw UsageError("dataset " + cfg.dataset.string() + " does not exist");
    return load_multiwoz(cfg.dataset, multiwoz_version_from_string(cfg.dataset_version), catalog);
}

CorpusDialogue as_corpus_dialogue(const GoldDialogue& dialogue, std::shared_ptr<const SchemaCatalog> catalog) {
    CorpusDialogue out{"gold", dialogue.dialogue_id, {}, std::move(catalog)};
    for (const auto& turn : dialogue.turns) out.turns.push_back({turn.user, turn.response, turn.state});
    return out;
}

std::vector<TurnInput> turn_inputs(const GoldDialogue& dialogue, const RunConfig& cfg) {
    std::vector<TurnInput> inputs;
    for (const auto& turn : dialogue.turns) {
        TurnInput input{turn.user, std::nullopt, std::nullopt};
        if (cfg.context == "gold") input.gold_response = turn.response;
        if (gold_oracle(cfg)) input.oracle_domain = turn.turn_domain;
        inputs.push_back(std::move(input));
    }
    return inputs;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + path.string());
    f << content;
    if (!f) throw Error("failed writing " + path.string());
}

}  // namespace

void RunConfig::validate_for_tracking() const {
    if (parallelism < 1) throw UsageError("--parallelism must be at least 1");
    if (max_tokens < 1) throw UsageError("--max-tokens must be positive");
    if (temperature < 0.0) throw UsageError("--temperature must be non-negative");
    if (top_p <= 0.0 || top_p > 1.0) throw UsageError("--top-p must lie in (0, 1]");
    if (max_retries < 0) throw UsageError("--max-retries must be non-negative");
    check_backend_settings(*this);
}

int cmd_evaluate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    cfg.validate_for_tracking();
    auto catalog = load_catalog_for(cfg);
    auto tracker = tracker_config(cfg, catalog);
    validate_tracker(tracker);
    auto dataset = load_dataset(cfg, *catalog);
    for (const auto& w : dataset.warnings) err << "warning: " << w << "\n";

    std::vector<GoldDialogue> dialogues;
    if (!cfg.dialogue_ids.empty()) {
        for (const auto& id : cfg.dialogue_ids) {
            auto it = std::find_if(dataset.dialogues.begin(), dataset.dialogues.end(),
                                   [&](const auto& d) { return d.dialogue_id == id; });
            if (it == dataset.dialogues.end()) throw UsageError("unknown dialogue id '" + id + "'");
            dialogues.push_back(*it);
        }
    } else {
        dialogues = dataset.dialogues;
    }
    if (cfg.max_dialogues && dialogues.size() > *cfg.max_dialogues) dialogues.resize(*cfg.max_dialogues);
    if (dialogues.empty()) throw UsageError("the dataset has no dialogues to evaluate");

    std::filesystem::create_directories(cfg.out_dir);
    tracker.backend = make_backend(cfg);

    const std::size_t n = dialogues.size();
    std::vector<std::vector<TurnResult>> results(n);
    std::vector<std::exception_ptr> failures(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
            try {
                const auto inputs = turn_inputs(dialogues[i], cfg);
                results[i] = run_dialogue(inputs, tracker);
            } catch (...) {
                failures[i] = std::current_exception();
            }
        }
    };
    const std::size_t threads = std::min(cfg.parallelism, n);
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (const auto& f : failures)
        if (f) std::rethrow_exception(f);

    std::string manifest_text;
    std::vector<ManifestRecord> manifest;
    std::size_t errors = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t t = 0; t < results[i].size(); ++t) {
            const auto record = manifest_record(dialogues[i].dialogue_id, t, results[i][t]);
            manifest_text += dump_line(record) + "\n";
            manifest.push_back(manifest_record_from_json(record));
            if (results[i][t].error) ++errors;
        }
    }
    write_file(cfg.out_dir / "manifest.jsonl", manifest_text);

    ReportOptions options;
    options.rule = cfg.domain_turns == "all" ? DomainTurnRule::all_turns : DomainTurnRule::active_only;
    EvalReport report;
    try {
        report = build_report(manifest, dialogues, dataset.goals, catalog->names(), catalog_normalizer(*catalog), options);
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    write_file(cfg.out_dir / "report.json", to_json(report).dump(2) + "\n");
    if (errors) err << "warning: " << errors << " turns failed at the backend; see the manifest\n";
    out << render_report_table(report, cfg.mode);
    return kExitOk;
}

int cmd_render(const RunConfig& cfg, const std::string& dialogue_id, std::size_t turn, std::ostream& out,
               std::ostream& err) {
    auto catalog = load_catalog_for(cfg);
    auto tracker = tracker_config(cfg, catalog);
    validate_tracker(tracker);
    auto dataset = load_dataset(cfg, *catalog);
    for (const auto& w : dataset.warnings) err << "warning: " << w << "\n";

    auto it = std::find_if(dataset.dialogues.begin(), dataset.dialogues.end(),
                           [&](const auto& d) { return d.dialogue_id == dialogue_id; });
    if (it == dataset.dialogues.end()) {
        err << "error: unknown dialogue id '" << dialogue_id << "'\n";
        return kExitFailure;
    }
    if (turn >= it->turns.size()) {
        err << "error: dialogue " << dialogue_id << " has " << it->turns.size() << " turns; turn " << turn
            << " does not exist\n";
        return kExitFailure;
    }

    auto context = training_context(as_corpus_dialogue(*it, catalog));
    context.turns.resize(turn + 1);
    context.turns.back().assistant.reset();
    const auto& tmpl = tracker.chat_template;
    const auto& prompt = tracker.prompt;

    if (prompt.mode == PipelineMode::monolithic) {
        out << "=== prompt (monolithic) ===\n"
            << apply_chat_template(build_monolithic_messages(*catalog, context, tracker.examples, prompt, tracker.instruction), tmpl)
            << "\n";
        return kExitOk;
    }
    std::optional<std::string> function = prompt.oracle_domain;
    if (gold_oracle(cfg)) function = it->turns[turn].turn_domain;
    if (!function) {
        out << "=== stage 1: function selection ===\n"
            << apply_chat_template(build_selection_messages(*catalog, context, prompt, tracker.instruction), tmpl)
            << "\n";
        // Stage 2 depends on the stage-1 answer; the gold domain stands in for it here.
        function = it->turns[turn].turn_domain;
    }
    if (!function) {
        out << "=== stage 2: arguments (no gold function for this turn) ===\n";
        return kExitOk;
    }
    std::span<const ExampleConversation> examples;
    if (auto ex = tracker.examples.find(*function); ex != tracker.examples.end()) examples = ex->second;
    out << "=== stage 2: arguments for " << *function << " ===\n"
        << apply_chat_template(
               build_argument_messages(catalog->at(*function), context, examples, prompt, tracker.instruction), tmpl)
        << "\n";
    return kExitOk;
}

int cmd_chat(const RunConfig& cfg, std::istream& in, std::ostream& out, std::ostream& err) {
    if (cfg.backend == "replay") throw UsageError("chat needs a live, record or mock backend");
    cfg.validate_for_tracking();
    if (gold_oracle(cfg)) throw UsageError("--oracle-domain gold needs a dataset; name a function instead");
    auto catalog = load_catalog_for(cfg);
    auto tracker = tracker_config(cfg, catalog);
    validate_tracker(tracker);
    tracker.backend = make_backend(cfg);

    DialogueContext context;
    DialogueState state;
    std::optional<std::string> previous;
    out << "functions: ";
    for (const auto& name : catalog->names()) out << name << " ";
    out << "\ncommands: /state /reset /quit\n";
    for (std::string line; out << "> " << std::flush, std::getline(in, line);) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (line.empty()) continue;
        if (line == "/quit") break;
        if (line == "/state") {
            out << "state: " << dump_line(to_json(state)) << "\n";
            continue;
        }
        if (line == "/reset") {
            context = {};
            state = {};
            previous.reset();
            out << "state: " << dump_line(to_json(state)) << "\n";
            continue;
        }
        context.turns.push_back({line, std::nullopt});
        auto result = track_turn(context, state, tracker, {previous, std::nullopt});
        if (result.error) err << "backend error: " << *result.error << "\n";
        for (const auto& w : result.warnings)
            if (w.kind != WarningKind::backend_error) err << "warning: " << to_string(w.kind) << ": " << w.detail << "\n";
        state = result.state_after;
        if (result.selected_function) previous = result.selected_function;
        context.turns.back().assistant = AssistantOutput{result.call, result.response};
        out << "function: " << (result.selected_function ? *result.selected_function : "(none)") << "\n"
            << "state: " << dump_line(to_json(state)) << "\n"
            << "assistant: " << result.response << "\n";
    }
    out << "\n";
    return kExitOk;
}

int cmd_export(const ExportConfig& cfg, std::ostream& out, std::ostream& err) {
    if (cfg.corpora.empty()) throw UsageError("export needs at least one --corpus");
    if (cfg.out.empty()) throw UsageError("export needs --out");
    if (cfg.per_domain < 1) throw UsageError("--per-domain must be at least 1");
    for (const auto& c : cfg.corpora)
        if (!path_exists(c)) throw UsageError("corpus manifest " + c.string() + " does not exist");
    const auto tmpl = pick_template(cfg.templates, cfg.template_name);

    std::vector<Corpus> corpora;
    for (const auto& c : cfg.corpora) corpora.push_back(load_corpus(c));
    SampleOptions options{cfg.per_domain, cfg.seed, std::nullopt};
    if (!cfg.domains.empty()) options.domains = std::set<std::string>(cfg.domains.begin(), cfg.domains.end());
    auto sample = sample_dialogues(corpora, options);
    for (const auto& w : sample.warnings) err << "warning: " << w << "\n";

    EmitOptions emit;
    emit.spec_rendering = cfg.spec_rendering == "text" ? SpecRendering::text : SpecRendering::json;
    auto emitted = emit_training_examples(sample.dialogues, tmpl, emit);
    for (const auto& w : emitted.warnings) err << "warning: " << w << "\n";

    std::string text;
    for (const auto& r : emitted.records) text += dump_line(to_json(r)) + "\n";
    if (cfg.out.has_parent_path()) std::filesystem::create_directories(cfg.out.parent_path());
    write_file(cfg.out, text);
    out << "domains: " << sample.drawn_per_domain.size() << "\n"
        << "records: " << emitted.records.size() << "\n";
    return kExitOk;
}

int run_cli(int argc, const char* const* argv, std::istream& in, std::ostream& out, std::ostream& err) {
    CLI::App app{"Dialogue state tracking as function calling: evaluation, prompt inspection, chat and export"};
    app.name("fcdst");
    app.require_subcommand(1);
    app.fallthrough();
    app.config_formatter(std::make_shared<FlexibleConfig>());
    app.set_config("--config", "", "Config file (JSON object or key = value lines); flags override it");

    RunConfig cfg;
    ExportConfig ex;
    std::optional<std::size_t> max_context_units;
    std::optional<std::size_t> max_dialogues;

    app.add_option("--dataset", cfg.dataset, "MultiWOZ data: 2.1 directory or data.json, 2.2 directory or file");
    app.add_option("--dataset-version", cfg.dataset_version)->check(CLI::IsMember({"2.1", "2.2"}))->capture_default_str();
    app.add_option("--catalog", cfg.catalog, "Function catalog file");
    app.add_option("--catalog-format", cfg.catalog_format)
        ->check(CLI::IsMember({"native", "multiwoz_ontology", "multiwoz"}))
        ->capture_default_str();
    app.add_option("--examples", cfg.examples, "Directory of <function>.json demonstration files");
    app.add_option("--templates", cfg.templates, "Extra chat templates (JSON array)");
    app.add_option("--template", cfg.template_name, "Chat template name")->capture_default_str();

    app.add_option("--backend", cfg.backend)
        ->check(CLI::IsMember({"live", "record", "replay", "mock"}))
        ->capture_default_str();
    app.add_option("--base-url", cfg.base_url, "OpenAI-compatible endpoint")->capture_default_str();
    app.add_option("--model", cfg.model)->capture_default_str();
    app.add_option("--api-key", cfg.api_key, std::string("API key; defaults to $") + kApiKeyEnv);
    app.add_option("--store", cfg.store, "Record/replay store (JSON lines)");
    app.add_option("--mock-script", cfg.mock_script, "Scripted mock responses (JSON)");
    app.add_flag("--raw-completion", cfg.raw_completion, "Send templated text to /completions");
    app.add_option("--timeout", cfg.timeout_seconds, "Seconds per HTTP request")->capture_default_str();
    app.add_option("--max-retries", cfg.max_retries)->capture_default_str();

    app.add_option("--mode", cfg.mode)->check(CLI::IsMember({"decomposed", "monolithic"}))->capture_default_str();
    app.add_option("--spec-rendering", cfg.spec_rendering)->check(CLI::IsMember({"json", "text"}))->capture_default_str();
    app.add_option("--n-shot", cfg.n_shot, "In-context examples per function")->capture_default_str();
    app.add_flag("--no-prev-calls", cfg.no_prev_calls, "Omit earlier function calls from the conversation");
    app.add_option("--oracle-domain", cfg.oracle_domain, "Skip selection: a function name, or 'gold'");
    app.add_option("--max-context-units", max_context_units, "Drop earliest turns beyond this many units");
    app.add_option("--fallback", cfg.fallback)->check(CLI::IsMember({"reuse_previous", "none"}))->capture_default_str();
    app.add_flag("--snap-enum", cfg.snap_enum, "Snap near-miss categorical values to the allowed value");
    app.add_option("--temperature", cfg.temperature)->capture_default_str();
    app.add_option("--top-p", cfg.top_p)->capture_default_str();
    app.add_option("--max-tokens", cfg.max_tokens)->capture_default_str();
    app.add_option("--context", cfg.context, "Responses shown in later prompts")
        ->check(CLI::IsMember({"gold", "model"}))
        ->capture_default_str();
    app.add_option("--domain-turns", cfg.domain_turns, "Turns counted for per-domain JGA")
        ->check(CLI::IsMember({"active", "all"}))
        ->capture_default_str();
    app.add_option("--dialogues", cfg.dialogue_ids, "Only these dialogue ids");
    app.add_option("--max-dialogues", max_dialogues);
    app.add_option("--out-dir", cfg.out_dir, "Where manifest.jsonl and report.json go")->capture_default_str();
    app.add_option("--seed", cfg.seed)->capture_default_str();
    app.add_option("--parallelism", cfg.parallelism, "Dialogues tracked concurrently")->capture_default_str();

    auto* evaluate = app.add_subcommand("evaluate", "Track a dataset and score it");
    auto* render = app.add_subcommand("render", "Print the prompts of one turn");
    std::string render_id;
    std::size_t render_turn = 0;
    render->add_option("dialogue_id", render_id)->required();
    render->add_option("turn", render_turn)->required();
    auto* chat = app.add_subcommand("chat", "Interactive session");
    auto* exporter = app.add_subcommand("export", "Write function-calling training records");
    exporter->add_option("--corpus", ex.corpora, "Corpus manifest (repeatable)");
    exporter->add_option("--per-domain", ex.per_domain)->capture_default_str();
    exporter->add_option("--out", ex.out, "Output JSON-lines file");
    exporter->add_option("--domains", ex.domains, "Functions to include (default: all)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kExitUsage;
    }
    cfg.max_context_units = max_context_units;
    cfg.max_dialogues = max_dialogues;

    try {
        if (evaluate->parsed()) return cmd_evaluate(cfg, out, err);
        if (render->parsed()) return cmd_render(cfg, render_id, render_turn, out, err);
        if (chat->parsed()) return cmd_chat(cfg, in, out, err);
        if (exporter->parsed()) {
            ex.seed = cfg.seed;
            ex.template_name = cfg.template_name;
            ex.templates = cfg.templates;
            ex.spec_rendering = cfg.spec_rendering;
            return cmd_export(ex, out, err);
        }
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}

}  // namespace fcdst::cli
