#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fcdst/dialogue.hpp"
#include "fcdst/schema.hpp"

namespace fcdst {

inline constexpr std::string_view kCallOpen = "<function_call>";
inline constexpr std::string_view kCallClose = "</function_call>";
inline constexpr std::string_view kDomainOpen = "<domain>";
inline constexpr std::string_view kDomainClose = "</domain>";

enum class WarningKind {
    // parser
    unknown_slot,
    bad_enum,
    repaired_json,
    missing_close_tag,
    empty_call,
    // tracker
    no_selection,
    selection_fallback,
    unknown_function,
    function_mismatch,
    backend_error,
};

std::string_view to_string(WarningKind kind);
WarningKind warning_kind_from_string(std::string_view text);

struct Warning {
    WarningKind kind;
    std::string detail;

    friend bool operator==(const Warning&, const Warning&) = default;
};

struct ParseOutcome {
    std::optional<FunctionCall> call;
    std::string response;
    std::vector<Warning> warnings;
};

struct DomainSelection {
    std::optional<std::string> domain;
    std::vector<Warning> warnings;
};

/// Trimmed content of the first <domain>...</domain> span. Never throws.
DomainSelection extract_domain(std::string_view text);

/// First <function_call> span parsed into a call; the rest of the text is the response.
/// Never throws: failures yield call == nullopt, response == text, and a warning.
ParseOutcome extract_function_call(std::string_view text);

/// Parses the first JSON object found in `text`, falling back to trailing-comma
/// removal and closing unbalanced braces. `repaired` is set when the fallback was needed.
std::optional<nlohmann::json> read_json_object(std::string_view text, bool* repaired = nullptr);

struct ValidateOptions {
    /// Replace out-of-enum values by the unique allowed value within edit distance 2.
    bool snap_enum = false;
};

/// Drops arguments unknown to `spec` and flags out-of-enum values.
ParseOutcome validate_call(const FunctionCall& call, const FunctionSpec& spec, const ValidateOptions& options = {});

/// Catalog name equal to `candidate` ignoring case and underscores, or the unique
/// function named "<prefix>_<candidate>" ("hotel" -> "find_hotel").
std::optional<std::string> snap_function_name(std::string_view candidate, const SchemaCatalog& catalog);

std::string normalize_value(const SlotSpec& slot, std::string_view raw);
/// Normalization for values whose slot has no spec (free text rules).
std::string normalize_value(std::string_view raw);

/// Looks slots up in `catalog`; unknown slots fall back to free-text normalization.
ValueNormalizer catalog_normalizer(const SchemaCatalog& catalog);
ValueNormalizer plain_normalizer();

std::size_t edit_distance(std::string_view a, std::string_view b);

}  // namespace fcdst
