#include "fcdst/schema.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fcdst/error.hpp"

namespace fcdst {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string lower(std::string_view text) {
    std::string out(text);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

bool is_special_value(std::string_view value) {
    const auto v = lower(value);
    return v.empty() || v == "none" || v == "not mentioned" || v == "dontcare" ||
           v == "don't care" || v == "do n't care" || v == "do nt care";
}

bool is_integer_text(std::string_view value) {
    return !value.empty() &&
           std::all_of(value.begin(), value.end(), [](unsigned char c) { return std::isdigit(c); });
}

// 1-based line of a byte offset, for parse error locations.
std::size_t line_of(std::string_view text, std::size_t byte) {
    byte = std::min(byte, text.size());
    return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

ordered_json parse_document(std::string_view source) {
    try {
        return ordered_json::parse(source.begin(), source.end());
    } catch (const ordered_json::parse_error& e) {
        throw ParseError("line " + std::to_string(line_of(source, e.byte)), e.what());
    }
}

const ordered_json& require(const ordered_json& obj, const std::string& key, const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end()) throw ParseError(where, "missing required key '" + key + "'");
    return *it;
}

std::string require_string(const ordered_json& obj, const std::string& key, const std::string& where) {
    const auto& v = require(obj, key, where);
    if (!v.is_string()) throw ParseError(where + "." + key, "expected a string");
    return v.get<std::string>();
}

void reject_unknown_keys(const ordered_json& obj, std::initializer_list<std::string_view> allowed,
                         const std::string& where) {
    for (const auto& [key, _] : obj.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw ParseError(where, "unknown key '" + key + "'");
    }
}

SlotSpec parse_native_slot(const ordered_json& j, const std::string& where) {
    if (!j.is_object()) throw ParseError(where, "expected an object");
    reject_unknown_keys(j, {"name", "description", "kind", "values", "required"}, where);
    SlotSpec slot;
    slot.name = require_string(j, "name", where);
    slot.description = require_string(j, "description", where);
    try {
        slot.kind = value_kind_from_string(require_string(j, "kind", where));
    } catch (const ParseError& e) {
        throw ParseError(where + ".kind", e.what());
    }
    if (auto it = j.find("values"); it != j.end()) {
        if (!it->is_array()) throw ParseError(where + ".values", "expected an array of strings");
        for (const auto& v : *it) {
            if (!v.is_string()) throw ParseError(where + ".values", "expected an array of strings");
            slot.allowed_values.push_back(v.get<std::string>());
        }
    }
    if (auto it = j.find("required"); it != j.end()) {
        if (!it->is_boolean()) throw ParseError(where + ".required", "expected a boolean");
        slot.is_required = it->get<bool>();
    }
    return slot;
}

SchemaCatalog load_native(std::string_view source) {
    const auto doc = parse_document(source);
    if (!doc.is_object()) throw ParseError("$", "top level must be an object");
    reject_unknown_keys(doc, {"version", "functions"}, "$");
    const auto version = require_string(doc, "version", "$");
    const auto& functions = require(doc, "functions", "$");
    if (!functions.is_array()) throw ParseError("$.functions", "expected an array");

    std::vector<FunctionSpec> specs;
    for (std::size_t i = 0; i < functions.size(); ++i) {
        const std::string where = "functions[" + std::to_string(i) + "]";
        const auto& f = functions[i];
        if (!f.is_object()) throw ParseError(where, "expected an object");
        reject_unknown_keys(f, {"name", "description", "slots"}, where);
        FunctionSpec spec;
        spec.name = require_string(f, "name", where);
        spec.description = require_string(f, "description", where);
        const auto& slots = require(f, "slots", where);
        if (!slots.is_array()) throw ParseError(where + ".slots", "expected an array");
        for (std::size_t k = 0; k < slots.size(); ++k)
            spec.slots.push_back(parse_native_slot(slots[k], where + ".slots[" + std::to_string(k) + "]"));
        specs.push_back(std::move(spec));
    }
    return SchemaCatalog(version, std::move(specs));
}

std::string humanize_slot(std::string_view slot) {
    static const std::map<std::string, std::string, std::less<>> known = {
        {"pricerange", "price range"},
        {"leaveat", "departure time"},
        {"arriveby", "arrival time"},
        {"book_people", "number of people for the booking"},
        {"book_day", "day of the booking"},
        {"book_stay", "number of nights to stay"},
        {"book_time", "time of the booking"},
    };
    if (auto it = known.find(slot); it != known.end()) return it->second;
    std::string out(slot);
    std::replace(out.begin(), out.end(), '_', ' ');
    return out;
}

// "restaurant-food" / "restaurant-semi-food" / "restaurant-book time"
SchemaCatalog load_multiwoz_ontology(std::string_view source) {
    const auto doc = parse_document(source);
    if (!doc.is_object()) throw ParseError("$", "ontology must be an object of slot keys");

    std::vector<std::string> domain_order;
    std::map<std::string, std::vector<std::pair<std::string, std::vector<std::string>>>> by_domain;
    for (const auto& [key, values] : doc.items()) {
        const auto dash = key.find('-');
        if (dash == std::string::npos || dash == 0 || dash + 1 == key.size())
            throw ParseError(key, "expected a 'domain-slot' key");
        if (!values.is_array()) throw ParseError(key, "expected an array of values");
        const auto domain = lower(key.substr(0, dash));
        const auto slot = multiwoz_slot_name(key.substr(dash + 1));
        std::vector<std::string> vals;
        for (const auto& v : values) {
            if (!v.is_string()) throw ParseError(key, "expected an array of strings");
            vals.push_back(v.get<std::string>());
        }
        if (!by_domain.contains(domain)) domain_order.push_back(domain);
        auto& slots = by_domain[domain];
        auto same = [&](const auto& p) { return p.first == slot; };
        if (std::find_if(slots.begin(), slots.end(), same) != slots.end())
            throw ValidationError("duplicate slot '" + slot + "' in domain '" + domain + "'");
        slots.emplace_back(slot, std::move(vals));
    }

    std::vector<FunctionSpec> specs;
    for (const auto& domain : domain_order) {
        FunctionSpec spec;
        spec.name = multiwoz_function_name(domain);
        spec.description = "Find or book a " + domain + ".";
        for (const auto& [slot_name, values] : by_domain[domain]) {
            SlotSpec slot;
            slot.name = slot_name;
            slot.description = "The " + humanize_slot(slot_name) + " of the " + domain + ".";
            std::vector<std::string> plain;
            std::set<std::string> seen;
            for (const auto& v : values) {
                if (is_special_value(v)) continue;
                auto lv = lower(v);
                if (seen.insert(lv).second) plain.push_back(lv);
            }
            const bool all_int = !plain.empty() && std::all_of(plain.begin(), plain.end(),
                                                                [](const auto& v) { return is_integer_text(v); });
            if (slot_name == "leaveat" || slot_name == "arriveby" || slot_name == "book_time") {
                slot.kind = ValueKind::time;
            } else if (all_int) {
                slot.kind = ValueKind::integer;
            } else if (!plain.empty() && plain.size() <= 10) {
                slot.kind = ValueKind::categorical;
                slot.allowed_values = std::move(plain);
            } else {
                slot.kind = ValueKind::free_text;
            }
            spec.slots.push_back(std::move(slot));
        }
        specs.push_back(std::move(spec));
    }
    return SchemaCatalog("multiwoz-2.1-ontology", std::move(specs));
}

std::string type_name(ValueKind kind) {
    switch (kind) {
        case ValueKind::integer: return "integer";
        case ValueKind::boolean: return "boolean";
        default: return "string";
    }
}

std::string slot_description(const SlotSpec& slot) {
    if (slot.kind == ValueKind::time) return slot.description + " (24-hour format hh:mm)";
    return slot.description;
}

std::string as_sentence(std::string text) {
    while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.pop_back();
    if (!text.empty() && text.back() != '.' && text.back() != '?' && text.back() != '!') text.push_back('.');
    return text;
}

std::string join(const std::vector<std::string>& items, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += sep;
        out += items[i];
    }
    return out;
}

}  // namespace

std::string_view to_string(ValueKind kind) {
    switch (kind) {
        case ValueKind::categorical: return "categorical";
        case ValueKind::free_text: return "free_text";
        case ValueKind::time: return "time";
        case ValueKind::integer: return "integer";
        case ValueKind::boolean: return "boolean";
    }
    return "free_text";
}

ValueKind value_kind_from_string(std::string_view text) {
    for (auto k : {ValueKind::categorical, ValueKind::free_text, ValueKind::time, ValueKind::integer,
                   ValueKind::boolean}) {
        if (to_string(k) == text) return k;
    }
    throw ParseError("", "unknown value kind '" + std::string(text) + "'");
}

const SlotSpec* FunctionSpec::find_slot(std::string_view slot) const {
    for (const auto& s : slots)
        if (s.name == slot) return &s;
    return nullptr;
}

bool is_identifier(std::string_view name) {
    return !name.empty() && std::none_of(name.begin(), name.end(), [](unsigned char c) {
        return std::isspace(c) || std::isupper(c);
    });
}

void validate(const SlotSpec& slot) {
    if (!is_identifier(slot.name))
        throw ValidationError("slot name '" + slot.name + "' must be non-empty, lowercase, without whitespace");
    if (slot.kind == ValueKind::categorical) {
        if (slot.allowed_values.empty())
            throw ValidationError("categorical slot '" + slot.name + "' needs allowed values");
        std::set<std::string> seen(slot.allowed_values.begin(), slot.allowed_values.end());
        if (seen.size() != slot.allowed_values.size())
            throw ValidationError("categorical slot '" + slot.name + "' has duplicate allowed values");
    }
}

void validate(const FunctionSpec& spec) {
    if (!is_identifier(spec.name))
        throw ValidationError("function name '" + spec.name + "' must be non-empty, lowercase, without whitespace");
    std::set<std::string> names;
    for (const auto& slot : spec.slots) {
        validate(slot);
        if (!names.insert(slot.name).second)
            throw ValidationError("duplicate slot '" + slot.name + "' in function '" + spec.name + "'");
    }
}

SchemaCatalog::SchemaCatalog(std::string version, std::vector<FunctionSpec> functions)
    : version_(std::move(version)), functions_(std::move(functions)) {
    if (functions_.empty()) throw ValidationError("catalog must contain at least one function");
    for (std::size_t i = 0; i < functions_.size(); ++i) {
        validate(functions_[i]);
        if (!index_.emplace(functions_[i].name, i).second)
            throw ValidationError("duplicate function name '" + functions_[i].name + "'");
    }
}

std::vector<std::string> SchemaCatalog::names() const {
    std::vector<std::string> out;
    out.reserve(functions_.size());
    for (const auto& f : functions_) out.push_back(f.name);
    return out;
}

const FunctionSpec* SchemaCatalog::find(std::string_view name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &functions_[it->second];
}

const FunctionSpec& SchemaCatalog::at(std::string_view name) const {
    if (const auto* spec = find(name)) return *spec;
    throw PreconditionError("function '" + std::string(name) + "' is not in the catalog");
}

CatalogFormat catalog_format_from_string(std::string_view text) {
    if (text == "native") return CatalogFormat::native;
    if (text == "multiwoz_ontology" || text == "multiwoz") return CatalogFormat::multiwoz_ontology;
    throw ParseError("", "unknown catalog format '" + std::string(text) + "'");
}

SchemaCatalog load_catalog(std::string_view source, CatalogFormat format) {
    return format == CatalogFormat::native ? load_native(source) : load_multiwoz_ontology(source);
}

SchemaCatalog load_catalog_file(const std::filesystem::path& path, CatalogFormat format) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open schema file " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    try {
        return load_catalog(buffer.str(), format);
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.where(), e.what());
    }
}

std::string to_native_document(const SchemaCatalog& catalog) {
    ordered_json doc;
    doc["version"] = catalog.version();
    doc["functions"] = ordered_json::array();
    for (const auto& spec : catalog.functions()) {
        ordered_json f;
        f["name"] = spec.name;
        f["description"] = spec.description;
        f["slots"] = ordered_json::array();
        for (const auto& slot : spec.slots) {
            ordered_json s;
            s["name"] = slot.name;
            s["description"] = slot.description;
            s["kind"] = std::string(to_string(slot.kind));
            if (!slot.allowed_values.empty()) s["values"] = slot.allowed_values;
            if (slot.is_required) s["required"] = true;
            f["slots"].push_back(std::move(s));
        }
        doc["functions"].push_back(std::move(f));
    }
    return doc.dump(2) + "\n";
}

SpecRendering spec_rendering_from_string(std::string_view text) {
    if (text == "json") return SpecRendering::json;
    if (text == "text") return SpecRendering::text;
    throw ParseError("", "unknown spec rendering '" + std::string(text) + "'");
}

std::string_view to_string(SpecRendering rendering) {
    return rendering == SpecRendering::json ? "json" : "text";
}

std::string render_spec_json(const FunctionSpec& spec) {
    ordered_json doc;
    doc["name"] = spec.name;
    doc["description"] = spec.description;
    ordered_json params = ordered_json::object();
    for (const auto& slot : spec.slots) {
        ordered_json p;
        p["description"] = slot_description(slot);
        p["type"] = type_name(slot.kind);
        if (slot.kind == ValueKind::categorical) p["enum"] = slot.allowed_values;
        params[slot.name] = std::move(p);
    }
    doc["parameters"] = std::move(params);
    return doc.dump(2);
}

std::string render_spec_text(const FunctionSpec& spec) {
    std::string out = "Function " + spec.name + ": " + as_sentence(spec.description);
    if (spec.slots.empty()) return out;
    out += "\nIt takes the following arguments:";
    for (const auto& slot : spec.slots) {
        out += "\n- " + slot.name + ": " + as_sentence(slot_description(slot));
        switch (slot.kind) {
            case ValueKind::categorical:
                out += " Possible values: " + join(slot.allowed_values, ", ") + ".";
                break;
            case ValueKind::integer: out += " The value is a number."; break;
            case ValueKind::boolean: out += " The value is true or false."; break;
            default: break;
        }
        if (slot.is_required) out += " This argument is required.";
    }
    return out;
}

std::string render_spec(const FunctionSpec& spec, SpecRendering rendering) {
    return rendering == SpecRendering::json ? render_spec_json(spec) : render_spec_text(spec);
}

std::string render_brief_descriptions(const SchemaCatalog& catalog) {
    std::vector<std::string> lines;
    for (const auto& spec : catalog.functions()) lines.push_back(spec.name + ": " + as_sentence(spec.description));
    return join(lines, "\n");
}

std::string multiwoz_function_name(std::string_view domain) { return "find_" + lower(domain); }

std::string multiwoz_slot_name(std::string_view raw) {
    auto name = lower(raw);
    for (std::string_view prefix : {"semi-", "semi "}) {
        if (name.starts_with(prefix)) name.erase(0, prefix.size());
    }
    auto squash = [](std::string s) {
        s.erase(std::remove_if(s.begin(), s.end(), [](char c) { return c == ' ' || c == '-' || c == '_'; }),
                s.end());
        return s;
    };
    if (name.starts_with("book") && name.size() > 4 && name != "booked") {
        auto rest = squash(name.substr(4));
        if (!rest.empty()) return "book_" + rest;
    }
    return squash(name);
}

}  // namespace fcdst
