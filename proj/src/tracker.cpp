#include "fcdst/tracker.hpp"

#include <algorithm>

#include <nlohmann/json.hpp>

#include "fcdst/error.hpp"

namespace fcdst {

namespace {

class TurnRunner {
public:
    TurnRunner(const DialogueContext& context, const DialogueState& state, const TrackerConfig& cfg)
        : context_(context), state_(state), cfg_(cfg), catalog_(*cfg.catalog) {
        result_.state_after = state;
    }

    TurnResult run(const TurnHints& hints) {
        try {
            if (cfg_.prompt.mode == PipelineMode::monolithic) {
                run_monolithic();
            } else {
                run_decomposed(hints);
            }
        } catch (const BackendError& e) {
            result_.error = e.what();
            result_.warnings.push_back({WarningKind::backend_error, e.what()});
            result_.call.reset();
            result_.response.clear();
            result_.state_after = state_;
        }
        return std::move(result_);
    }

private:
    CompletionResult issue(const std::vector<ChatMessage>& messages, const GenerationParams& params) {
        CompletionRequest request;
        request.messages = messages;
        if (cfg_.raw_completion) request.prompt = apply_chat_template(messages, cfg_.chat_template);
        request.params = params;
        request.model_id = cfg_.model_id;
        ++result_.backend_calls;
        return complete(request, *cfg_.backend);
    }

    void note(std::vector<Warning> warnings) {
        result_.warnings.insert(result_.warnings.end(), warnings.begin(), warnings.end());
    }

    void measure_arguments(const std::vector<ChatMessage>& messages) {
        result_.units.argument_prompt = count_prompt_units(apply_chat_template(messages, cfg_.chat_template));
        result_.units.argument_system = count_prompt_units(messages.front().content);
    }

    void run_monolithic() {
        auto messages = build_monolithic_messages(catalog_, context_, cfg_.examples, cfg_.prompt, cfg_.instruction);
        measure_arguments(messages);
        auto completion = issue(messages, cfg_.params);
        finish(completion.text, std::nullopt);
    }

    std::optional<std::string> select(const TurnHints& hints) {
        if (hints.oracle_domain) return hints.oracle_domain;
        if (cfg_.prompt.oracle_domain) return cfg_.prompt.oracle_domain;

        auto messages = build_selection_messages(catalog_, context_, cfg_.prompt, cfg_.instruction);
        result_.units.selection_prompt = count_prompt_units(apply_chat_template(messages, cfg_.chat_template));
        auto params = cfg_.params;
        params.max_tokens = std::min(params.max_tokens, 16);
        const std::string close(kDomainClose);
        if (std::find(params.stop_sequences.begin(), params.stop_sequences.end(), close) ==
            params.stop_sequences.end())
            params.stop_sequences.push_back(close);
        auto completion = issue(messages, params);

        // The stop sequence swallows the close tag; put it back so a clean answer parses cleanly.
        auto text = completion.text;
        if (text.find(kDomainOpen) != std::string::npos && text.find(kDomainClose) == std::string::npos &&
            completion.finish_reason == FinishReason::stop)
            text += close;
        auto selection = extract_domain(text);
        note(selection.warnings);

        std::optional<std::string> selected;
        if (selection.domain) {
            selected = snap_function_name(*selection.domain, catalog_);
            if (!selected) result_.warnings.push_back({WarningKind::unknown_function, *selection.domain});
        }
        if (selected) return selected;
        if (cfg_.fallback == DomainFallback::reuse_previous && hints.previous_selection) {
            result_.warnings.push_back({WarningKind::selection_fallback, *hints.previous_selection});
            return hints.previous_selection;
        }
        result_.warnings.push_back({WarningKind::no_selection, completion.text});
        return std::nullopt;
    }

    void run_decomposed(const TurnHints& hints) {
        auto selected = select(hints);
        if (!selected) return;
        const auto& spec = catalog_.at(*selected);
        result_.selected_function = spec.name;

        std::span<const ExampleConversation> examples;
        if (auto it = cfg_.examples.find(spec.name); it != cfg_.examples.end()) examples = it->second;
        auto messages = build_argument_messages(spec, context_, examples, cfg_.prompt, cfg_.instruction);
        measure_arguments(messages);
        auto completion = issue(messages, cfg_.params);
        finish(completion.text, spec.name);
    }

    void finish(const std::string& text, const std::optional<std::string>& selected) {
        auto outcome = extract_function_call(text);
        note(outcome.warnings);
        result_.response = outcome.response;
        if (!outcome.call) return;

        auto call = std::move(*outcome.call);
        auto named = snap_function_name(call.function, catalog_);
        std::string function;
        if (selected) {
            if (!named) {
                result_.warnings.push_back({WarningKind::unknown_function, call.function});
                function = *selected;
            } else {
                if (*named != *selected) result_.warnings.push_back({WarningKind::function_mismatch, *named});
                function = *named;
            }
        } else {
            if (!named) {
                result_.warnings.push_back({WarningKind::unknown_function, call.function});
                return;
            }
            function = *named;
            result_.selected_function = function;
        }
        call.function = function;
        auto checked = validate_call(call, catalog_.at(function), cfg_.validation);
        note(checked.warnings);
        result_.call = std::move(checked.call);
        result_.state_after = update_state(state_, *result_.call);
    }

    const DialogueContext& context_;
    const DialogueState& state_;
    const TrackerConfig& cfg_;
    const SchemaCatalog& catalog_;
    TurnResult result_;
};

}  // namespace

DomainFallback domain_fallback_from_string(std::string_view text) {
    if (text == "reuse_previous") return DomainFallback::reuse_previous;
    if (text == "none") return DomainFallback::none;
    throw ParseError("", "unknown fallback '" + std::string(text) + "'");
}

void TrackerConfig::validate() const {
    if (!backend) throw ValidationError("tracker needs a backend");
    if (!catalog) throw ValidationError("tracker needs a catalog");
    params.validate();
    if (prompt.oracle_domain && !catalog->find(*prompt.oracle_domain))
        throw ValidationError("oracle domain '" + *prompt.oracle_domain + "' is not in the catalog");
    for (const auto& [domain, list] : examples) {
        if (!catalog->find(domain)) throw ValidationError("examples given for unknown function '" + domain + "'");
        for (const auto& ex : list) fcdst::validate(ex);
    }
    if (prompt.n_shot > 0) {
        for (const auto& name : catalog->names()) {
            auto it = examples.find(name);
            const std::size_t available = it == examples.end() ? 0 : it->second.size();
            if (available < prompt.n_shot)
                throw ValidationError(std::to_string(prompt.n_shot) + "-shot prompting needs that many examples for " +
                                      name + ", found " + std::to_string(available));
        }
    }
}

TurnResult track_turn(const DialogueContext& context, const DialogueState& state, const TrackerConfig& cfg,
                      const TurnHints& hints) {
    if (!context.has_pending_user()) throw PreconditionError("context has no pending user utterance");
    if (!cfg.backend || !cfg.catalog) throw PreconditionError("tracker config is missing a backend or catalog");
    if (hints.oracle_domain && !cfg.catalog->find(*hints.oracle_domain))
        throw PreconditionError("oracle domain '" + *hints.oracle_domain + "' is not in the catalog");
    return TurnRunner(context, state, cfg).run(hints);
}

std::vector<TurnResult> run_dialogue(std::span<const TurnInput> turns, const TrackerConfig& cfg) {
    if (turns.empty()) throw PreconditionError("dialogue has no turns");
    std::vector<TurnResult> results;
    results.reserve(turns.size());
    DialogueContext context;
    DialogueState state;
    std::optional<std::string> previous;
    for (const auto& input : turns) {
        context.turns.push_back({input.user, std::nullopt});
        auto result = track_turn(context, state, cfg, {previous, input.oracle_domain});
        state = result.state_after;
        if (result.selected_function) previous = result.selected_function;
        // Completed turns always carry an assistant entry; an empty one renders as nothing.
        context.turns.back().assistant =
            AssistantOutput{result.call, input.gold_response ? *input.gold_response : result.response};
        results.push_back(std::move(result));
    }
    return results;
}

nlohmann::json manifest_record(const std::string& dialogue_id, std::size_t turn, const TurnResult& result) {
    auto warnings = nlohmann::json::array();
    for (const auto& w : result.warnings) warnings.push_back({{"kind", std::string(to_string(w.kind))}, {"detail", w.detail}});
    return {{"dialogue_id", dialogue_id},
            {"turn", turn},
            {"selected", result.selected_function ? nlohmann::json(*result.selected_function) : nlohmann::json(nullptr)},
            {"call", result.call ? to_json(*result.call) : nlohmann::json(nullptr)},
            {"state", to_json(result.state_after)},
            {"response", result.response},
            {"warnings", std::move(warnings)},
            {"units",
             {{"selection", result.units.selection_prompt},
              {"arguments", result.units.argument_prompt},
              {"arguments_system", result.units.argument_system}}},
            {"error", result.error ? nlohmann::json(*result.error) : nlohmann::json(nullptr)}};
}

}  // namespace fcdst
