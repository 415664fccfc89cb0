#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fcdst/dialogue.hpp"
#include "fcdst/schema.hpp"

namespace fcdst {

struct GoldTurn {
    std::string dialogue_id;
    std::size_t turn = 0;
    DialogueState state;
    std::string user;
    std::string response;        // system reply as written in the corpus
    std::string delex_response;  // with [value_slot] placeholders where available
    std::set<std::string> active_domains;
    /// Function whose state the user's turn touched; carried over from earlier turns when none changed.
    std::optional<std::string> turn_domain;
};

struct GoldDialogue {
    std::string dialogue_id;
    std::vector<GoldTurn> turns;
};

struct DomainGoal {
    SlotValues constraints;
    std::vector<std::string> requested;
    bool has_booking = false;
};

struct UserGoal {
    std::string dialogue_id;
    std::map<std::string, DomainGoal> domains;  // keyed by function name
};

struct Dataset {
    std::vector<GoldDialogue> dialogues;
    std::vector<UserGoal> goals;
    std::vector<std::string> warnings;
    std::size_t skipped_slots = 0;
};

enum class MultiwozVersion { v21, v22 };

MultiwozVersion multiwoz_version_from_string(std::string_view text);

/// Loads MultiWOZ 2.1 (`data.json` plus optional `testListFile.txt`, or a bare data file)
/// or 2.2 (a `test/` directory of dialogue files, a directory of them, or one file).
/// Slots are mapped onto `catalog` ("hotel" + "price range" -> find_hotel.pricerange);
/// slots the catalog lacks are skipped and counted.
Dataset load_multiwoz(const std::filesystem::path& path, MultiwozVersion version, const SchemaCatalog& catalog);

enum class DomainTurnRule { active_only, all_turns };

struct MetricScope {
    std::optional<std::string> domain;  // nullopt = every domain
    DomainTurnRule rule = DomainTurnRule::active_only;

    static MetricScope overall() { return {}; }
    static MetricScope for_domain(std::string name, DomainTurnRule rule = DomainTurnRule::active_only) {
        return {std::move(name), rule};
    }
};

/// Fraction of in-scope turns whose normalized state matches gold exactly; nullopt when no turn is in scope.
std::optional<double> joint_goal_accuracy(std::span<const DialogueState> preds, std::span<const GoldTurn> golds,
                                          const MetricScope& scope, const ValueNormalizer& normalizer);

/// Micro F1 over pooled (domain, slot, value) triples; 1.0 when both sides are empty.
std::optional<double> slot_f1(std::span<const DialogueState> preds, std::span<const GoldTurn> golds,
                              const MetricScope& scope, const ValueNormalizer& normalizer);

struct DialogueRun {
    std::string dialogue_id;
    std::vector<std::string> responses;
};

struct SuccessOptions {
    /// Placeholders that count as offering an entity, per function; others use default_offer.
    std::map<std::string, std::vector<std::string>> offer_placeholders = {
        {"find_train", {"[value_id]", "[value_trainid]"}},
        {"find_taxi", {"[value_car]", "[value_type]"}},
    };
    std::vector<std::string> default_offer = {"[value_name]"};
};

struct SuccessResult {
    double rate = 0.0;
    std::size_t successes = 0;
    std::size_t judged = 0;
    std::vector<std::string> warnings;
};

/// Dialogues without a goal are not judged. Throws PreconditionError when nothing can be judged.
SuccessResult success_rate(std::span<const DialogueRun> runs, std::span<const UserGoal> goals,
                           const SuccessOptions& options = {});

/// "[value_phone]" for "phone"; trainID -> id, ref -> reference.
std::string request_placeholder(std::string_view requested_slot);

struct ManifestRecord {
    std::string dialogue_id;
    std::size_t turn = 0;
    std::optional<std::string> selected;
    DialogueState state;
    std::string response;
};

ManifestRecord manifest_record_from_json(const nlohmann::json& j);
std::vector<ManifestRecord> load_manifest(const std::filesystem::path& path);

struct DomainScores {
    std::optional<double> jga;
    std::optional<double> f1;
    std::size_t turns = 0;
};

struct EvalReport {
    std::vector<std::pair<std::string, DomainScores>> per_domain;
    std::optional<double> average_jga;
    std::optional<double> overall_jga;
    std::optional<double> success;
    std::size_t n_dialogues = 0;
    std::size_t n_turns = 0;
};

struct ReportOptions {
    DomainTurnRule rule = DomainTurnRule::active_only;
    SuccessOptions success;
};

/// Throws ValidationError naming the dialogues the manifest does not cover.
EvalReport build_report(std::span<const ManifestRecord> manifest, std::span<const GoldDialogue> golds,
                        std::span<const UserGoal> goals, const std::vector<std::string>& domains,
                        const ValueNormalizer& normalizer, const ReportOptions& options = {});

nlohmann::json to_json(const EvalReport& report);
/// Fixed-width table: per-domain JGA/F1 pairs, then average and overall JGA, in percent.
std::string render_report_table(const EvalReport& report, std::string_view label = "run");

}  // namespace fcdst
