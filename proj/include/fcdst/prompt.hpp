#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fcdst/dialogue.hpp"
#include "fcdst/schema.hpp"

namespace fcdst {

enum class Role { system, user, assistant };

std::string_view to_string(Role role);
Role role_from_string(std::string_view text);

struct ChatMessage {
    Role role;
    std::string content;

    friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

enum class SystemPlacement { standalone, prefixed_to_first_user };

/// Per-role begin/end markers of one model's chat format.
struct ChatTemplate {
    std::string name;
    std::string system_begin, system_end;
    std::string user_begin, user_end;
    std::string assistant_begin, assistant_end;
    SystemPlacement placement = SystemPlacement::standalone;
    std::string generation_cue;

    friend bool operator==(const ChatTemplate&, const ChatTemplate&) = default;
};

/// Read-only set of chat templates, loaded from a JSON array of template objects.
class TemplateRegistry {
public:
    TemplateRegistry() = default;
    explicit TemplateRegistry(std::vector<ChatTemplate> templates);

    static TemplateRegistry from_json_text(std::string_view text);
    static TemplateRegistry from_file(const std::filesystem::path& path);

    [[nodiscard]] const ChatTemplate* find(std::string_view name) const;
    /// Throws PreconditionError for unknown names.
    [[nodiscard]] const ChatTemplate& at(std::string_view name) const;
    [[nodiscard]] std::vector<std::string> names() const;

private:
    std::vector<ChatTemplate> templates_;
};

/// plain, llama2, vicuna and chatml.
TemplateRegistry builtin_templates();

enum class PipelineMode { decomposed, monolithic };

PipelineMode pipeline_mode_from_string(std::string_view text);
std::string_view to_string(PipelineMode mode);

struct PromptConfig {
    PipelineMode mode = PipelineMode::decomposed;
    SpecRendering spec_rendering = SpecRendering::json;
    std::size_t n_shot = 0;
    bool include_prev_calls = true;
    std::optional<std::string> oracle_domain;
    /// Whole earliest turns are dropped while the serialized context exceeds this many units.
    std::optional<std::size_t> max_context_units;
};

/// Demonstration dialogue for one function; every assistant turn carries a call to it.
struct ExampleConversation {
    std::string domain;
    DialogueContext context;
};

using ExampleSets = std::map<std::string, std::vector<ExampleConversation>, std::less<>>;

/// Validates domain ownership. Throws ValidationError.
void validate(const ExampleConversation& example);

/// One JSON file per domain (`<domain>.json`), each an array of canonical dialogue contexts.
std::vector<ExampleConversation> load_examples_file(const std::filesystem::path& path, const std::string& domain);
ExampleSets load_examples_dir(const std::filesystem::path& dir, const SchemaCatalog& catalog);

inline constexpr std::string_view kDefaultInstruction =
    "You are a task-oriented assistant. You can use the given functions to fetch further data to help the users.";

inline constexpr std::string_view kSelectionDirective =
    "Based on the conversation, choose the one function that best matches the user's latest request. "
    "Output only the function name, surrounded by <domain> and </domain>.";

std::string build_system_prompt(std::string_view instruction, std::string_view spec_block,
                                std::span<const std::string> examples);

/// "<function_call> {json} </function_call>"
std::string render_function_call(const FunctionCall& call);
std::string render_assistant_output(const AssistantOutput& output, bool include_call);
std::string render_example(const ExampleConversation& example);

std::vector<ChatMessage> serialize_context(const DialogueContext& context, bool include_prev_calls);

/// Drops whole earliest turns (never the last one) until the serialized context fits `budget`.
DialogueContext truncate_context(const DialogueContext& context, bool include_prev_calls, std::size_t budget);

std::vector<ChatMessage> build_selection_messages(const SchemaCatalog& catalog, const DialogueContext& context,
                                                  const PromptConfig& cfg,
                                                  std::string_view instruction = kDefaultInstruction);

std::vector<ChatMessage> build_argument_messages(const FunctionSpec& spec, const DialogueContext& context,
                                                 std::span<const ExampleConversation> examples,
                                                 const PromptConfig& cfg,
                                                 std::string_view instruction = kDefaultInstruction);

/// Single-stage prompt embedding every full spec (and n_shot examples per domain).
std::vector<ChatMessage> build_monolithic_messages(const SchemaCatalog& catalog, const DialogueContext& context,
                                                   const ExampleSets& examples, const PromptConfig& cfg,
                                                   std::string_view instruction = kDefaultInstruction);

struct RenderedPrompt {
    std::string text;
    /// Byte offset of each message's content in `text`, aligned with the input messages.
    std::vector<std::size_t> content_offsets;
};

/// Breaks template markers inside content by inserting a backslash after their first character; marker
/// occurrences that already carry backslashes there get one more, which keeps the mapping injective.
/// Markers match without their surrounding whitespace, so "<|end|>" is broken even when the marker is "<|end|>\n".
std::string escape_markers(std::string_view content, const ChatTemplate& tmpl);

RenderedPrompt render_chat(std::span<const ChatMessage> messages, const ChatTemplate& tmpl,
                           bool add_generation_cue = true);
std::string apply_chat_template(std::span<const ChatMessage> messages, const ChatTemplate& tmpl,
                                bool add_generation_cue = true);

/// Whitespace-delimited unit count used as a tokenizer-free length proxy.
std::size_t count_prompt_units(std::string_view text);

}  // namespace fcdst
