#include "fcdst/export.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fcdst/error.hpp"
#include "fcdst/parse.hpp"

namespace fcdst {

namespace {

using json = nlohmann::json;

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

json read_json(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    auto doc = json::parse(buffer.str(), nullptr, false);
    if (doc.is_discarded()) throw ParseError(path.string(), "malformed JSON");
    return doc;
}

std::string text_field(const json& obj, const char* key, const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end() || !it->is_string()) throw ParseError(where, std::string("missing string field '") + key + "'");
    return it->get<std::string>();
}

// Uniform draw in [0, bound) by rejection, so the stream is identical on every standard library.
std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return x % bound;
}

bool is_integer_text(std::string_view s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); });
}

std::vector<std::string> unknown_references(const CorpusDialogue& dialogue, const SchemaCatalog& catalog) {
    std::vector<std::string> out;
    for (const auto& turn : dialogue.turns) {
        for (const auto& [domain, values] : turn.state.domains()) {
            const auto* spec = catalog.find(domain);
            if (!spec) {
                out.push_back("function " + domain);
                continue;
            }
            for (const auto& [slot, _] : values)
                if (!spec->find_slot(slot)) out.push_back("slot " + domain + "." + slot);
        }
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

}  // namespace

std::set<std::string> CorpusDialogue::domains() const {
    std::set<std::string> out;
    for (const auto& turn : turns)
        for (const auto& [domain, _] : turn.state.domains()) out.insert(domain);
    return out;
}

CorpusFormat corpus_format_from_string(std::string_view text) {
    if (text == "canonical") return CorpusFormat::canonical;
    if (text == "sgd") return CorpusFormat::sgd;
    throw ParseError("", "unknown corpus format '" + std::string(text) + "'");
}

Corpus corpus_from_canonical(std::string name, std::shared_ptr<const SchemaCatalog> catalog, const json& dialogues) {
    if (!dialogues.is_array()) throw ParseError(name, "expected an array of dialogues");
    Corpus corpus{name, catalog, {}};
    for (std::size_t i = 0; i < dialogues.size(); ++i) {
        const auto& d = dialogues[i];
        const std::string where = name + "[" + std::to_string(i) + "]";
        if (!d.is_object() || !d.contains("turns") || !d["turns"].is_array())
            throw ParseError(where, "dialogue needs 'dialogue_id' and 'turns'");
        CorpusDialogue dialogue{name, text_field(d, "dialogue_id", where), {}, catalog};
        for (std::size_t t = 0; t < d["turns"].size(); ++t) {
            const auto& turn = d["turns"][t];
            const std::string twhere = where + ".turns[" + std::to_string(t) + "]";
            if (!turn.is_object()) throw ParseError(twhere, "turn must be an object");
            CorpusTurn ct;
            ct.user = text_field(turn, "user", twhere);
            ct.system = turn.value("system", std::string());
            ct.state = state_from_json(turn.value("state", json::object()));
            dialogue.turns.push_back(std::move(ct));
        }
        corpus.dialogues.push_back(std::move(dialogue));
    }
    return corpus;
}

SchemaCatalog catalog_from_sgd_schema(const json& schema) {
    if (!schema.is_array()) throw ParseError("sgd schema", "expected an array of services");
    std::vector<FunctionSpec> functions;
    for (const auto& service : schema) {
        const auto name = text_field(service, "service_name", "sgd schema");
        FunctionSpec spec{lower(name), service.value("description", std::string()), {}};
        std::set<std::string> required;
        for (const auto& intent : service.value("intents", json::array()))
            for (const auto& slot : intent.value("required_slots", json::array()))
                if (slot.is_string()) required.insert(slot.get<std::string>());
        for (const auto& s : service.value("slots", json::array())) {
            SlotSpec slot;
            slot.name = lower(text_field(s, "name", "sgd schema " + name));
            slot.description = s.value("description", std::string());
            slot.is_required = required.contains(s["name"].get<std::string>());
            std::vector<std::string> values;
            for (const auto& v : s.value("possible_values", json::array()))
                if (v.is_string()) values.push_back(v.get<std::string>());
            if (s.value("is_categorical", false) && !values.empty()) {
                std::vector<std::string> lowered;
                for (const auto& v : values) lowered.push_back(lower(v));
                std::sort(lowered.begin(), lowered.end());
                if (lowered == std::vector<std::string>{"false", "true"}) {
                    slot.kind = ValueKind::boolean;
                } else if (std::all_of(values.begin(), values.end(), is_integer_text)) {
                    slot.kind = ValueKind::integer;
                } else {
                    slot.kind = ValueKind::categorical;
                    slot.allowed_values = values;
                }
            }
            spec.slots.push_back(std::move(slot));
        }
        functions.push_back(std::move(spec));
    }
    return SchemaCatalog("sgd", std::move(functions));
}

Corpus corpus_from_sgd(std::string name, std::shared_ptr<const SchemaCatalog> catalog,
                       std::span<const json> dialogue_files) {
    Corpus corpus{name, catalog, {}};
    for (const auto& file : dialogue_files) {
        if (!file.is_array()) throw ParseError(name, "expected an array of SGD dialogues");
        for (const auto& d : file) {
            const auto id = text_field(d, "dialogue_id", name);
            CorpusDialogue dialogue{name, id, {}, catalog};
            DialogueState running;
            const auto turns = d.value("turns", json::array());
            for (std::size_t i = 0; i < turns.size(); ++i) {
                const auto& t = turns[i];
                if (t.value("speaker", std::string()) != "USER") continue;
                for (const auto& frame : t.value("frames", json::array())) {
                    const auto service = lower(frame.value("service", std::string()));
                    const auto state = frame.value("state", json::object());
                    SlotValues values;
                    const auto slot_values = state.value("slot_values", json::object());
                    for (const auto& [slot, v] : slot_values.items()) {
                        if (v.is_array() && !v.empty() && v.front().is_string()) {
                            values[lower(slot)] = v.front().get<std::string>();
                        } else if (v.is_string()) {
                            values[lower(slot)] = v.get<std::string>();
                        }
                    }
                    running.replace_domain(service, values);
                }
                CorpusTurn ct{text_field(t, "utterance", name + ":" + id), "", running};
                if (i + 1 < turns.size() && turns[i + 1].value("speaker", std::string()) == "SYSTEM")
                    ct.system = turns[i + 1].value("utterance", std::string());
                dialogue.turns.push_back(std::move(ct));
            }
            corpus.dialogues.push_back(std::move(dialogue));
        }
    }
    return corpus;
}

Corpus load_corpus(const std::filesystem::path& manifest) {
    const auto doc = read_json(manifest);
    const auto where = manifest.string();
    if (!doc.is_object()) throw ParseError(where, "corpus manifest must be an object");
    for (const auto& [key, _] : doc.items())
        if (key != "name" && key != "format" && key != "schema" && key != "dialogues")
            throw ParseError(where, "unknown key '" + key + "'");
    const auto base = manifest.parent_path();
    const auto name = text_field(doc, "name", where);
    const auto format = corpus_format_from_string(doc.value("format", std::string("canonical")));
    const auto schema_path = base / text_field(doc, "schema", where);

    std::vector<std::filesystem::path> dialogue_paths;
    const auto dialogues = doc.value("dialogues", json());
    if (dialogues.is_string()) {
        dialogue_paths.push_back(base / dialogues.get<std::string>());
    } else if (dialogues.is_array()) {
        for (const auto& p : dialogues) {
            if (!p.is_string()) throw ParseError(where, "'dialogues' entries must be paths");
            dialogue_paths.push_back(base / p.get<std::string>());
        }
    } else {
        throw ParseError(where, "'dialogues' must be a path or a list of paths");
    }

    if (format == CorpusFormat::canonical) {
        auto catalog = std::make_shared<const SchemaCatalog>(load_catalog_file(schema_path, CatalogFormat::native));
        Corpus corpus{name, catalog, {}};
        for (const auto& path : dialogue_paths) {
            auto part = corpus_from_canonical(name, catalog, read_json(path));
            for (auto& d : part.dialogues) corpus.dialogues.push_back(std::move(d));
        }
        return corpus;
    }
    auto catalog = std::make_shared<const SchemaCatalog>(catalog_from_sgd_schema(read_json(schema_path)));
    std::vector<json> files;
    for (const auto& path : dialogue_paths) files.push_back(read_json(path));
    return corpus_from_sgd(name, catalog, files);
}

std::vector<std::optional<FunctionCall>> calls_from_gold_states(const CorpusDialogue& dialogue) {
    std::vector<std::optional<FunctionCall>> calls;
    DialogueState prev;
    std::optional<std::string> active;
    for (const auto& turn : dialogue.turns) {
        std::optional<std::string> changed;
        std::set<std::string> names;
        for (const auto& [d, _] : prev.domains()) names.insert(d);
        for (const auto& [d, _] : turn.state.domains()) names.insert(d);
        // Catalog order first, then any remaining names alphabetically.
        std::vector<std::string> order;
        if (dialogue.catalog)
            for (const auto& n : dialogue.catalog->names())
                if (names.erase(n)) order.push_back(n);
        order.insert(order.end(), names.begin(), names.end());
        for (const auto& name : order) {
            const auto* a = prev.domain(name);
            const auto* b = turn.state.domain(name);
            if ((a == nullptr) != (b == nullptr) || (a && *a != *b)) {
                changed = name;
                break;
            }
        }
        if (changed) active = changed;
        if (active) {
            const auto* values = turn.state.domain(*active);
            calls.push_back(FunctionCall{*active, values ? *values : SlotValues{}});
        } else {
            calls.push_back(std::nullopt);
        }
        prev = turn.state;
    }
    return calls;
}

DialogueContext training_context(const CorpusDialogue& dialogue) {
    const auto calls = calls_from_gold_states(dialogue);
    DialogueContext context;
    for (std::size_t i = 0; i < dialogue.turns.size(); ++i)
        context.turns.push_back({dialogue.turns[i].user, AssistantOutput{calls[i], dialogue.turns[i].system}});
    return context;
}

SampleResult sample_dialogues(std::span<const Corpus> corpora, const SampleOptions& options) {
    if (options.per_domain < 1) throw PreconditionError("per_domain must be at least 1");

    std::map<std::string, std::vector<const CorpusDialogue*>> pools;
    if (options.domains) {
        for (const auto& d : *options.domains) pools[d];
    } else {
        for (const auto& corpus : corpora)
            if (corpus.catalog)
                for (const auto& n : corpus.catalog->names()) pools[n];
    }
    for (const auto& corpus : corpora)
        for (const auto& dialogue : corpus.dialogues)
            for (const auto& domain : dialogue.domains())
                if (auto it = pools.find(domain); it != pools.end()) it->second.push_back(&dialogue);

    SampleResult out;
    std::mt19937_64 rng(options.seed);
    std::set<std::pair<std::string, std::string>> seen;
    for (auto& [domain, pool] : pools) {
        if (pool.empty()) {
            out.warnings.push_back("domain " + domain + " has no dialogues; skipped");
            continue;
        }
        const std::size_t take = std::min(options.per_domain, pool.size());
        if (take < options.per_domain)
            out.warnings.push_back("domain " + domain + " has only " + std::to_string(pool.size()) +
                                   " dialogues; took all of them");
        for (std::size_t i = 0; i < take; ++i) {
            const auto j = i + static_cast<std::size_t>(uniform_below(rng, pool.size() - i));
            std::swap(pool[i], pool[j]);
        }
        out.drawn_per_domain[domain] = take;
        for (std::size_t i = 0; i < take; ++i)
            if (seen.emplace(pool[i]->corpus, pool[i]->dialogue_id).second) out.dialogues.push_back(*pool[i]);
    }
    return out;
}

namespace {

std::optional<TrainingRecord> emit_one(const CorpusDialogue& dialogue, const SchemaCatalog& catalog,
                                       const ChatTemplate& tmpl, const EmitOptions& options,
                                       std::vector<std::string>& warnings) {
    const auto where = dialogue.corpus + ":" + dialogue.dialogue_id;
    if (dialogue.turns.empty()) {
        warnings.push_back("dialogue " + where + " has no turns; skipped");
        return std::nullopt;
    }
    if (auto unknown = unknown_references(dialogue, catalog); !unknown.empty()) {
        warnings.push_back("dialogue " + where + " references unknown " + unknown.front() + "; skipped");
        return std::nullopt;
    }

    const auto context = training_context(dialogue);
    std::set<std::string> invoked;
    for (const auto& turn : context.turns)
        if (turn.assistant->call) invoked.insert(turn.assistant->call->function);
    std::vector<std::string> specs;
    for (const auto& spec : catalog.functions())
        if (invoked.contains(spec.name)) specs.push_back(render_spec(spec, options.spec_rendering));
    std::string block;
    for (const auto& s : specs) block += (block.empty() ? "" : "\n\n") + s;

    std::vector<ChatMessage> messages{{Role::system, build_system_prompt(options.instruction, block, {})}};
    auto turns = serialize_context(context, true);
    messages.insert(messages.end(), turns.begin(), turns.end());
    auto rendered = render_chat(messages, tmpl, false);

    TrainingRecord record{std::move(rendered.text), {}, dialogue.corpus, dialogue.dialogue_id};
    const std::string open(kCallOpen);
    const std::string close(kCallClose);
    for (std::size_t m = 0; m < messages.size(); ++m) {
        if (messages[m].role != Role::assistant || !messages[m].content.starts_with(open)) continue;
        const auto start = rendered.content_offsets[m];
        const auto end = record.text.find(close, start);
        if (record.text.compare(start, open.size(), open) != 0 || end == std::string::npos)
            throw Error("function call span not found in rendered text of " + where);
        record.mask_spans.push_back({start, end + close.size() - start});
    }
    return record;
}

}  // namespace

EmitResult emit_training_examples(std::span<const CorpusDialogue> dialogues, const SchemaCatalog& catalog,
                                  const ChatTemplate& tmpl, const EmitOptions& options) {
    EmitResult out;
    for (const auto& dialogue : dialogues)
        if (auto record = emit_one(dialogue, catalog, tmpl, options, out.warnings)) out.records.push_back(std::move(*record));
    return out;
}

EmitResult emit_training_examples(std::span<const CorpusDialogue> dialogues, const ChatTemplate& tmpl,
                                  const EmitOptions& options) {
    EmitResult out;
    for (const auto& dialogue : dialogues) {
        if (!dialogue.catalog) {
            out.warnings.push_back("dialogue " + dialogue.corpus + ":" + dialogue.dialogue_id + " has no catalog; skipped");
            continue;
        }
        if (auto record = emit_one(dialogue, *dialogue.catalog, tmpl, options, out.warnings))
            out.records.push_back(std::move(*record));
    }
    return out;
}

json to_json(const TrainingRecord& record) {
    auto spans = json::array();
    for (const auto& s : record.mask_spans) spans.push_back({s.offset, s.length});
    return {{"text", record.text},
            {"mask_spans", std::move(spans)},
            {"source", {{"corpus", record.corpus}, {"dialogue_id", record.dialogue_id}}}};
}

}  // namespace fcdst
