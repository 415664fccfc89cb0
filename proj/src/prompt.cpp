#include "fcdst/prompt.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fcdst/error.hpp"
#include "fcdst/parse.hpp"

namespace fcdst {

namespace {

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

std::string join(std::span<const std::string> items, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += sep;
        out += items[i];
    }
    return out;
}

// Marker without its surrounding whitespace; content matching this core is what gets escaped.
std::string_view marker_core(std::string_view marker) {
    const auto first = marker.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    return marker.substr(first, marker.find_last_not_of(" \t\r\n") - first + 1);
}


ChatTemplate parse_template(const nlohmann::json& j, const std::string& where) {
    if (!j.is_object()) throw ParseError(where, "expected a template object");
    static const std::set<std::string> allowed = {"name",           "system_begin",    "system_end",
                                                  "user_begin",     "user_end",        "assistant_begin",
                                                  "assistant_end",  "placement",       "generation_cue"};
    for (const auto& [key, _] : j.items())
        if (!allowed.contains(key)) throw ParseError(where, "unknown key '" + key + "'");
    auto field = [&](const char* key) {
        auto it = j.find(key);
        if (it == j.end() || !it->is_string())
            throw ParseError(where, std::string("missing string field '") + key + "'");
        return it->get<std::string>();
    };
    ChatTemplate t;
    t.name = field("name");
    t.system_begin = field("system_begin");
    t.system_end = field("system_end");
    t.user_begin = field("user_begin");
    t.user_end = field("user_end");
    t.assistant_begin = field("assistant_begin");
    t.assistant_end = field("assistant_end");
    t.generation_cue = field("generation_cue");
    const auto placement = field("placement");
    if (placement == "standalone") {
        t.placement = SystemPlacement::standalone;
    } else if (placement == "prefixed_to_first_user") {
        t.placement = SystemPlacement::prefixed_to_first_user;
    } else {
        throw ParseError(where + ".placement", "unknown placement '" + placement + "'");
    }
    if (t.name.empty()) throw ParseError(where + ".name", "must be non-empty");
    return t;
}

void require_pending(const DialogueContext& context) {
    if (!context.has_pending_user()) throw PreconditionError("context has no pending user utterance");
}

std::vector<ChatMessage> with_system(std::string system, const DialogueContext& context, const PromptConfig& cfg) {
    const auto& ctx = cfg.max_context_units
                          ? truncate_context(context, cfg.include_prev_calls, *cfg.max_context_units)
                          : context;
    std::vector<ChatMessage> messages{{Role::system, std::move(system)}};
    auto rest = serialize_context(ctx, cfg.include_prev_calls);
    messages.insert(messages.end(), std::make_move_iterator(rest.begin()), std::make_move_iterator(rest.end()));
    return messages;
}

}  // namespace

std::string_view to_string(Role role) {
    switch (role) {
        case Role::system: return "system";
        case Role::user: return "user";
        case Role::assistant: return "assistant";
    }
    return "user";
}

Role role_from_string(std::string_view text) {
    if (text == "system") return Role::system;
    if (text == "user") return Role::user;
    if (text == "assistant") return Role::assistant;
    throw ParseError("", "unknown role '" + std::string(text) + "'");
}

TemplateRegistry::TemplateRegistry(std::vector<ChatTemplate> templates) : templates_(std::move(templates)) {
    std::set<std::string> names;
    for (const auto& t : templates_)
        if (!names.insert(t.name).second) throw ValidationError("duplicate chat template '" + t.name + "'");
}

TemplateRegistry TemplateRegistry::from_json_text(std::string_view text) {
    auto doc = nlohmann::json::parse(text.begin(), text.end(), nullptr, false);
    if (doc.is_discarded()) throw ParseError("templates", "invalid JSON");
    if (!doc.is_array()) throw ParseError("templates", "expected an array of templates");
    std::vector<ChatTemplate> templates;
    for (std::size_t i = 0; i < doc.size(); ++i)
        templates.push_back(parse_template(doc[i], "templates[" + std::to_string(i) + "]"));
    return TemplateRegistry(std::move(templates));
}

TemplateRegistry TemplateRegistry::from_file(const std::filesystem::path& path) {
    return from_json_text(read_file(path));
}

const ChatTemplate* TemplateRegistry::find(std::string_view name) const {
    for (const auto& t : templates_)
        if (t.name == name) return &t;
    return nullptr;
}

const ChatTemplate& TemplateRegistry::at(std::string_view name) const {
    if (const auto* t = find(name)) return *t;
    throw PreconditionError("unknown chat template '" + std::string(name) + "'");
}

std::vector<std::string> TemplateRegistry::names() const {
    std::vector<std::string> out;
    for (const auto& t : templates_) out.push_back(t.name);
    return out;
}

PipelineMode pipeline_mode_from_string(std::string_view text) {
    if (text == "decomposed") return PipelineMode::decomposed;
    if (text == "monolithic") return PipelineMode::monolithic;
    throw ParseError("", "unknown pipeline mode '" + std::string(text) + "'");
}

TemplateRegistry builtin_templates() {
    using P = SystemPlacement;
    return TemplateRegistry({
        {"plain", "<|system|>\n", "<|end|>\n", "<|user|>\n", "<|end|>\n", "<|assistant|>\n", "<|end|>\n",
         P::standalone, "<|assistant|>\n"},
        {"llama2", "<<SYS>>\n", "\n<</SYS>>\n\n", "<s>[INST] ", " [/INST]", " ", " </s>", P::prefixed_to_first_user, ""},
        {"vicuna", "", "\n\n", "USER: ", "\n", "ASSISTANT: ", "</s>\n", P::standalone, "ASSISTANT:"},
        {"chatml", "<|im_start|>system\n", "<|im_end|>\n", "<|im_start|>user\n", "<|im_end|>\n",
         "<|im_start|>assistant\n", "<|im_end|>\n", P::standalone, "<|im_start|>assistant\n"},
    });
}

std::string_view to_string(PipelineMode mode) {
    return mode == PipelineMode::decomposed ? "decomposed" : "monolithic";
}

void validate(const ExampleConversation& example) {
    if (example.context.turns.empty()) throw ValidationError("example conversation for " + example.domain + " is empty");
    for (const auto& turn : example.context.turns) {
        if (!turn.assistant || !turn.assistant->call)
            throw ValidationError("example conversation for " + example.domain + " has a turn without a call");
        if (turn.assistant->call->function != example.domain)
            throw ValidationError("example conversation for " + example.domain + " calls " +
                                  turn.assistant->call->function);
    }
}

std::vector<ExampleConversation> load_examples_file(const std::filesystem::path& path, const std::string& domain) {
    auto doc = nlohmann::json::parse(read_file(path), nullptr, false);
    if (doc.is_discarded() || !doc.is_array()) throw ParseError(path.string(), "expected a JSON array of conversations");
    std::vector<ExampleConversation> out;
    for (std::size_t i = 0; i < doc.size(); ++i) {
        ExampleConversation ex;
        ex.domain = domain;
        try {
            ex.context = context_from_json(doc[i]);
        } catch (const ParseError& e) {
            throw ParseError(path.string() + "[" + std::to_string(i) + "]", e.what());
        }
        validate(ex);
        out.push_back(std::move(ex));
    }
    return out;
}

ExampleSets load_examples_dir(const std::filesystem::path& dir, const SchemaCatalog& catalog) {
    ExampleSets sets;
    for (const auto& name : catalog.names()) {
        const auto path = dir / (name + ".json");
        if (std::filesystem::exists(path)) sets[name] = load_examples_file(path, name);
    }
    return sets;
}

std::string build_system_prompt(std::string_view instruction, std::string_view spec_block,
                                std::span<const std::string> examples) {
    if (instruction.empty()) throw PreconditionError("system prompt instruction must be non-empty");
    std::string out(instruction);
    out += "\n\n<FUNCTIONS>\n";
    out += spec_block;
    out += "\n</FUNCTIONS>";
    if (!examples.empty()) {
        out += "\n\n<EXAMPLES>\n";
        out += join(examples, "\n\n");
        out += "\n</EXAMPLES>";
    }
    return out;
}

std::string render_function_call(const FunctionCall& call) {
    nlohmann::ordered_json j;
    j["function"] = call.function;
    j["arguments"] = nlohmann::ordered_json::object();
    for (const auto& [slot, value] : call.arguments) j["arguments"][slot] = value;
    auto body = j.dump(-1, ' ', false, nlohmann::ordered_json::error_handler_t::replace);
    // "</" only occurs inside JSON strings; "<\/" decodes to the same text and keeps close tags out.
    for (std::size_t pos = 0; (pos = body.find("</", pos)) != std::string::npos; pos += 3) body.replace(pos, 2, "<\\/");
    return std::string(kCallOpen) + " " + body + " " + std::string(kCallClose);
}

std::string render_assistant_output(const AssistantOutput& output, bool include_call) {
    if (!include_call || !output.call) return output.response;
    auto out = render_function_call(*output.call);
    if (!output.response.empty()) out += " " + output.response;
    return out;
}

std::string render_example(const ExampleConversation& example) {
    std::string out;
    for (const auto& turn : example.context.turns) {
        if (!out.empty()) out += "\n";
        out += "User: " + turn.user;
        if (turn.assistant) out += "\nAssistant: " + render_assistant_output(*turn.assistant, true);
    }
    return out;
}

std::vector<ChatMessage> serialize_context(const DialogueContext& context, bool include_prev_calls) {
    std::vector<ChatMessage> messages;
    for (const auto& turn : context.turns) {
        messages.push_back({Role::user, turn.user});
        if (!turn.assistant) continue;
        auto content = render_assistant_output(*turn.assistant, include_prev_calls);
        if (!content.empty()) messages.push_back({Role::assistant, std::move(content)});
    }
    return messages;
}

DialogueContext truncate_context(const DialogueContext& context, bool include_prev_calls, std::size_t budget) {
    std::vector<std::size_t> turn_units;
    std::size_t total = 0;
    for (const auto& turn : context.turns) {
        std::size_t units = count_prompt_units(turn.user);
        if (turn.assistant) units += count_prompt_units(render_assistant_output(*turn.assistant, include_prev_calls));
        turn_units.push_back(units);
        total += units;
    }
    std::size_t drop = 0;
    while (total > budget && drop + 1 < context.turns.size()) total -= turn_units[drop++];
    DialogueContext out;
    out.turns.assign(context.turns.begin() + static_cast<std::ptrdiff_t>(drop), context.turns.end());
    return out;
}

std::vector<ChatMessage> build_selection_messages(const SchemaCatalog& catalog, const DialogueContext& context,
                                                  const PromptConfig& cfg, std::string_view instruction) {
    require_pending(context);
    auto system = build_system_prompt(instruction, render_brief_descriptions(catalog), {});
    system += "\n\n";
    system += kSelectionDirective;
    return with_system(std::move(system), context, cfg);
}

std::vector<ChatMessage> build_argument_messages(const FunctionSpec& spec, const DialogueContext& context,
                                                 std::span<const ExampleConversation> examples,
                                                 const PromptConfig& cfg, std::string_view instruction) {
    require_pending(context);
    for (const auto& ex : examples)
        if (ex.domain != spec.name)
            throw ValidationError("example for " + ex.domain + " passed with spec " + spec.name);
    if (examples.size() < cfg.n_shot)
        throw PreconditionError(std::to_string(cfg.n_shot) + "-shot prompt for " + spec.name + " but only " +
                                std::to_string(examples.size()) + " examples available");
    std::vector<std::string> rendered;
    for (std::size_t i = 0; i < cfg.n_shot; ++i) rendered.push_back(render_example(examples[i]));
    return with_system(build_system_prompt(instruction, render_spec(spec, cfg.spec_rendering), rendered), context,
                       cfg);
}

std::vector<ChatMessage> build_monolithic_messages(const SchemaCatalog& catalog, const DialogueContext& context,
                                                   const ExampleSets& examples, const PromptConfig& cfg,
                                                   std::string_view instruction) {
    require_pending(context);
    std::vector<std::string> specs;
    std::vector<std::string> rendered;
    for (const auto& spec : catalog.functions()) {
        specs.push_back(render_spec(spec, cfg.spec_rendering));
        if (cfg.n_shot == 0) continue;
        auto it = examples.find(spec.name);
        const std::size_t available = it == examples.end() ? 0 : it->second.size();
        if (available < cfg.n_shot)
            throw PreconditionError(std::to_string(cfg.n_shot) + "-shot prompt for " + spec.name + " but only " +
                                    std::to_string(available) + " examples available");
        for (std::size_t i = 0; i < cfg.n_shot; ++i) rendered.push_back(render_example(it->second[i]));
    }
    return with_system(build_system_prompt(instruction, join(specs, "\n\n"), rendered), context, cfg);
}

std::string escape_markers(std::string_view content, const ChatTemplate& tmpl) {
    const std::string* markers[] = {&tmpl.system_begin,    &tmpl.system_end,    &tmpl.user_begin,
                                    &tmpl.user_end,        &tmpl.assistant_begin, &tmpl.assistant_end,
                                    &tmpl.generation_cue};
    // True when `m` occurs at `pos` with k >= 0 backslashes after its first character.
    auto broken_at = [&](std::size_t pos, std::string_view m) {
        if (content[pos] != m.front()) return false;
        const std::string_view tail = std::string_view(m).substr(1);
        for (std::size_t j = pos + 1; j <= content.size(); ++j) {
            if (content.substr(j).starts_with(tail)) return true;
            if (j == content.size() || content[j] != '\\') return false;
        }
        return false;
    };
    // A backslash goes after the first character of every marker occurrence, escaped or not. Output never
    // contains a marker, and the mapping is injective: such backslash runs are one longer than in the input.
    std::string out;
    out.reserve(content.size());
    for (std::size_t i = 0; i < content.size(); ++i) {
        out.push_back(content[i]);
        for (const auto* marker : markers) {
            const auto core = marker_core(*marker);
            if (core.size() < 2 || core.front() == '\\') continue;
            if (broken_at(i, core)) {
                out.push_back('\\');
                break;
            }
        }
    }
    return out;
}

RenderedPrompt render_chat(std::span<const ChatMessage> messages, const ChatTemplate& tmpl, bool add_generation_cue) {
    RenderedPrompt out;
    out.content_offsets.assign(messages.size(), 0);
    std::size_t first = 0;
    std::optional<std::string> held_system;
    if (!messages.empty() && messages.front().role == Role::system) {
        auto content = escape_markers(messages.front().content, tmpl);
        const bool has_user = std::any_of(messages.begin() + 1, messages.end(),
                                          [](const auto& m) { return m.role == Role::user; });
        if (tmpl.placement == SystemPlacement::prefixed_to_first_user && has_user) {
            held_system = std::move(content);
        } else {
            out.text += tmpl.system_begin;
            out.content_offsets[0] = out.text.size();
            out.text += content;
            out.text += tmpl.system_end;
        }
        first = 1;
    }
    for (std::size_t i = first; i < messages.size(); ++i) {
        const auto& m = messages[i];
        switch (m.role) {
            case Role::system: throw PreconditionError("only one leading system message is allowed");
            case Role::user:
                out.text += tmpl.user_begin;
                if (held_system) {
                    out.text += tmpl.system_begin;
                    out.content_offsets[0] = out.text.size();
                    out.text += *held_system;
                    out.text += tmpl.system_end;
                    held_system.reset();
                }
                out.content_offsets[i] = out.text.size();
                out.text += escape_markers(m.content, tmpl);
                out.text += tmpl.user_end;
                break;
            case Role::assistant:
                out.text += tmpl.assistant_begin;
                out.content_offsets[i] = out.text.size();
                out.text += escape_markers(m.content, tmpl);
                out.text += tmpl.assistant_end;
                break;
        }
    }
    if (add_generation_cue) out.text += tmpl.generation_cue;
    return out;
}

std::string apply_chat_template(std::span<const ChatMessage> messages, const ChatTemplate& tmpl,
                                bool add_generation_cue) {
    return render_chat(messages, tmpl, add_generation_cue).text;
}

std::size_t count_prompt_units(std::string_view text) {
    std::size_t units = 0;
    bool in_unit = false;
    for (char c : text) {
        const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
        if (!space && !in_unit) ++units;
        in_unit = !space;
    }
    return units;
}

}  // namespace fcdst
