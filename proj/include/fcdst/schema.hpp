#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fcdst {

enum class ValueKind { categorical, free_text, time, integer, boolean };

std::string_view to_string(ValueKind kind);
/// Throws ParseError for unknown spellings.
ValueKind value_kind_from_string(std::string_view text);

struct SlotSpec {
    std::string name;
    std::string description;
    ValueKind kind = ValueKind::free_text;
    std::vector<std::string> allowed_values;  // required when kind == categorical
    bool is_required = false;

    friend bool operator==(const SlotSpec&, const SlotSpec&) = default;
};

/// One task domain seen as a callable function; its slots are the arguments.
struct FunctionSpec {
    std::string name;
    std::string description;
    std::vector<SlotSpec> slots;

    [[nodiscard]] const SlotSpec* find_slot(std::string_view slot) const;

    friend bool operator==(const FunctionSpec&, const FunctionSpec&) = default;
};

/// True for non-empty names without whitespace or uppercase characters.
bool is_identifier(std::string_view name);

/// Throws ValidationError when a slot or function breaks its invariants.
void validate(const SlotSpec& slot);
void validate(const FunctionSpec& spec);

/// Ordered set of functions offered to the model. Never empty.
class SchemaCatalog {
public:
    SchemaCatalog(std::string version, std::vector<FunctionSpec> functions);

    [[nodiscard]] const std::string& version() const noexcept { return version_; }
    [[nodiscard]] std::span<const FunctionSpec> functions() const noexcept { return functions_; }
    [[nodiscard]] std::size_t size() const noexcept { return functions_.size(); }
    [[nodiscard]] std::vector<std::string> names() const;

    [[nodiscard]] const FunctionSpec* find(std::string_view name) const;
    /// Throws PreconditionError for names outside the catalog.
    [[nodiscard]] const FunctionSpec& at(std::string_view name) const;

    friend bool operator==(const SchemaCatalog& a, const SchemaCatalog& b) {
        return a.version_ == b.version_ && a.functions_ == b.functions_;
    }

private:
    std::string version_;
    std::vector<FunctionSpec> functions_;
    std::map<std::string, std::size_t, std::less<>> index_;
};

enum class CatalogFormat { native, multiwoz_ontology };

CatalogFormat catalog_format_from_string(std::string_view text);

SchemaCatalog load_catalog(std::string_view source, CatalogFormat format);
SchemaCatalog load_catalog_file(const std::filesystem::path& path, CatalogFormat format);

/// Native schema document for a catalog; load_catalog reads it back unchanged.
std::string to_native_document(const SchemaCatalog& catalog);

enum class SpecRendering { json, text };

SpecRendering spec_rendering_from_string(std::string_view text);
std::string_view to_string(SpecRendering rendering);

std::string render_spec_json(const FunctionSpec& spec);
std::string render_spec_text(const FunctionSpec& spec);
std::string render_spec(const FunctionSpec& spec, SpecRendering rendering);
std::string render_brief_descriptions(const SchemaCatalog& catalog);

/// MultiWOZ naming: "hotel" -> "find_hotel".
std::string multiwoz_function_name(std::string_view domain);
/// "price range" / "pricerange" -> "pricerange", "book stay" / "bookstay" -> "book_stay",
/// "leaveAt" -> "leaveat".
std::string multiwoz_slot_name(std::string_view raw);

}  // namespace fcdst
