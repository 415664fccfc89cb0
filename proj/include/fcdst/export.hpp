#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fcdst/dialogue.hpp"
#include "fcdst/prompt.hpp"
#include "fcdst/schema.hpp"

namespace fcdst {

struct CorpusTurn {
    std::string user;
    std::string system;
    DialogueState state;  // cumulative gold state after the user's utterance
};

struct CorpusDialogue {
    std::string corpus;
    std::string dialogue_id;
    std::vector<CorpusTurn> turns;
    std::shared_ptr<const SchemaCatalog> catalog;

    /// Functions with a non-empty state on some turn, sorted.
    [[nodiscard]] std::set<std::string> domains() const;
};

struct Corpus {
    std::string name;
    std::shared_ptr<const SchemaCatalog> catalog;
    std::vector<CorpusDialogue> dialogues;
};

enum class CorpusFormat { canonical, sgd };

CorpusFormat corpus_format_from_string(std::string_view text);

/// Canonical dialogues: [{"dialogue_id", "turns": [{"user", "system", "state"}]}].
Corpus corpus_from_canonical(std::string name, std::shared_ptr<const SchemaCatalog> catalog,
                             const nlohmann::json& dialogues);

/// SGD service schema list -> catalog; one function per service, named by the lowercased service name.
SchemaCatalog catalog_from_sgd_schema(const nlohmann::json& schema);

/// SGD dialogue lists; per-service states persist across turns where the service has no frame.
Corpus corpus_from_sgd(std::string name, std::shared_ptr<const SchemaCatalog> catalog,
                       std::span<const nlohmann::json> dialogue_files);

/// Corpus manifest: {"name", "format": "canonical"|"sgd", "schema": path, "dialogues": path or [paths]}.
/// Paths are relative to the manifest.
Corpus load_corpus(const std::filesystem::path& manifest);

/// One call per turn after the first state change: the turn's active function with its full current slot set.
/// The active function is the first (catalog order) whose slots changed, else the previous turn's.
std::vector<std::optional<FunctionCall>> calls_from_gold_states(const CorpusDialogue& dialogue);

/// Completed context pairing each user turn with its gold call and system reply.
DialogueContext training_context(const CorpusDialogue& dialogue);

struct SampleOptions {
    std::size_t per_domain = 200;
    std::uint64_t seed = 0;
    /// Restricts sampling to these functions; otherwise every function of every corpus catalog.
    std::optional<std::set<std::string>> domains;
};

struct SampleResult {
    std::vector<CorpusDialogue> dialogues;  // deduplicated by (corpus, dialogue_id)
    std::map<std::string, std::size_t> drawn_per_domain;
    std::vector<std::string> warnings;
};

/// Draws min(per_domain, available) dialogues per function without replacement.
/// Domains are visited in sorted order and one seeded generator drives every draw.
SampleResult sample_dialogues(std::span<const Corpus> corpora, const SampleOptions& options);

struct MaskSpan {
    std::size_t offset = 0;
    std::size_t length = 0;

    friend bool operator==(const MaskSpan&, const MaskSpan&) = default;
};

/// Invariant: spans are sorted, disjoint, in bounds, and each covers "<function_call> ... </function_call>".
struct TrainingRecord {
    std::string text;
    std::vector<MaskSpan> mask_spans;
    std::string corpus;
    std::string dialogue_id;
};

struct EmitOptions {
    SpecRendering spec_rendering = SpecRendering::json;
    std::string instruction{kDefaultInstruction};
};

struct EmitResult {
    std::vector<TrainingRecord> records;
    std::vector<std::string> warnings;
};

/// The system prompt carries the specs of the functions the dialogue invokes and no examples.
/// Dialogues naming functions outside `catalog` are skipped with a warning.
EmitResult emit_training_examples(std::span<const CorpusDialogue> dialogues, const SchemaCatalog& catalog,
                                  const ChatTemplate& tmpl, const EmitOptions& options = {});

/// As above, using each dialogue's own corpus catalog.
EmitResult emit_training_examples(std::span<const CorpusDialogue> dialogues, const ChatTemplate& tmpl,
                                  const EmitOptions& options = {});

nlohmann::json to_json(const TrainingRecord& record);

}  // namespace fcdst
