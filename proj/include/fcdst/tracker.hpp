#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fcdst/backend.hpp"
#include "fcdst/dialogue.hpp"
#include "fcdst/parse.hpp"
#include "fcdst/prompt.hpp"
#include "fcdst/schema.hpp"

namespace fcdst {

enum class DomainFallback { reuse_previous, none };

DomainFallback domain_fallback_from_string(std::string_view text);

struct TrackerConfig {
    PromptConfig prompt;
    BackendHandle backend;
    ChatTemplate chat_template;
    std::shared_ptr<const SchemaCatalog> catalog;
    ExampleSets examples;
    DomainFallback fallback = DomainFallback::reuse_previous;
    GenerationParams params;
    std::string model_id;
    std::string instruction{kDefaultInstruction};
    /// Send pre-templated text instead of chat messages.
    bool raw_completion = false;
    ValidateOptions validation;

    /// Throws ValidationError when referenced functions, examples or params are inconsistent.
    void validate() const;
};

struct StageUnits {
    std::size_t selection_prompt = 0;
    std::size_t argument_prompt = 0;
    std::size_t argument_system = 0;

    friend bool operator==(const StageUnits&, const StageUnits&) = default;
};

struct TurnResult {
    std::optional<std::string> selected_function;
    std::optional<FunctionCall> call;
    DialogueState state_after;
    std::string response;
    std::vector<Warning> warnings;
    StageUnits units;
    std::optional<std::string> error;
    std::size_t backend_calls = 0;
};

struct TurnHints {
    /// Function picked on the previous turn, used by DomainFallback::reuse_previous.
    std::optional<std::string> previous_selection;
    /// Per-turn oracle function; overrides cfg.prompt.oracle_domain.
    std::optional<std::string> oracle_domain;
};

/// One pipeline step for the pending user utterance at the end of `context`.
TurnResult track_turn(const DialogueContext& context, const DialogueState& state, const TrackerConfig& cfg,
                      const TurnHints& hints = {});

struct TurnInput {
    std::string user;
    /// When present it replaces the model's own response in later context (DST-only runs).
    std::optional<std::string> gold_response;
    std::optional<std::string> oracle_domain;
};

std::vector<TurnResult> run_dialogue(std::span<const TurnInput> turns, const TrackerConfig& cfg);

/// One run-manifest line: {dialogue_id, turn, selected, call, state, response, warnings, units}.
nlohmann::json manifest_record(const std::string& dialogue_id, std::size_t turn, const TurnResult& result);

}  // namespace fcdst
