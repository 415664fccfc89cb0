#include "fcdst/parse.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <memory>
#include <regex>

#include <nlohmann/json.hpp>

#include "fcdst/error.hpp"

namespace fcdst {

namespace {

constexpr std::size_t npos = std::string_view::npos;

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string_view trim(std::string_view s) {
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::string squash_name(std::string_view s) {
    std::string out;
    for (char c : s) {
        if (c == '_' || c == '-' || is_space(c)) continue;
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    return out;
}

// Index one past the '}' closing the object that opens at `open`, or npos when unbalanced.
std::size_t match_braces(std::string_view text, std::size_t open) {
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = open; i < text.size(); ++i) {
        const char c = text[i];
        if (in_string) {
            if (escaped) {
                escaped = false;
            } else if (c == '\\') {
                escaped = true;
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        if (c == '"') {
            in_string = true;
        } else if (c == '{') {
            ++depth;
        } else if (c == '}') {
            if (--depth == 0) return i + 1;
        }
    }
    return npos;
}

// Removes commas that directly precede a closer and appends whatever closers are missing.
std::optional<std::string> repair_json(std::string_view text) {
    std::string out;
    std::vector<char> stack;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (in_string) {
            out.push_back(c);
            if (escaped) {
                escaped = false;
            } else if (c == '\\') {
                escaped = true;
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        switch (c) {
            case '"': in_string = true; break;
            case '{': stack.push_back('}'); break;
            case '[': stack.push_back(']'); break;
            case '}':
            case ']':
                if (stack.empty() || stack.back() != c) return std::nullopt;
                stack.pop_back();
                break;
            case ',': {
                std::size_t j = i + 1;
                while (j < text.size() && is_space(text[j])) ++j;
                if (j < text.size() && (text[j] == '}' || text[j] == ']')) continue;
                break;
            }
            default: break;
        }
        out.push_back(c);
    }
    if (in_string) {
        if (escaped) out.pop_back();
        out.push_back('"');
    }
    while (!out.empty() && (is_space(out.back()) || out.back() == ',')) out.pop_back();
    for (auto it = stack.rbegin(); it != stack.rend(); ++it) out.push_back(*it);
    return out;
}

std::optional<std::string> scalar_text(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number()) return v.dump();
    if (v.is_array() && !v.empty()) return scalar_text(v.front());
    return std::nullopt;
}

std::optional<nlohmann::json> arguments_object(const nlohmann::json& obj) {
    for (const char* key : {"arguments", "parameters", "args"}) {
        auto it = obj.find(key);
        if (it == obj.end()) continue;
        if (it->is_object()) return std::optional<nlohmann::json>(std::in_place, *it);
        if (it->is_string()) {
            auto inner = nlohmann::json::parse(it->get<std::string>(), nullptr, false);
            if (inner.is_object()) return inner;
        }
        return std::nullopt;
    }
    return nlohmann::json::object();
}

std::optional<FunctionCall> interpret_call(const nlohmann::json& obj) {
    std::string name;
    std::optional<nlohmann::json> args;
    auto fn = obj.find("function");
    if (fn != obj.end() && fn->is_string()) {
        name = fn->get<std::string>();
        args = arguments_object(obj);
    } else if (auto nm = obj.find("name"); nm != obj.end() && nm->is_string() &&
                                           (obj.contains("arguments") || obj.contains("parameters"))) {
        name = nm->get<std::string>();
        args = arguments_object(obj);
    } else if (obj.size() == 1 && obj.begin().value().is_object()) {
        name = obj.begin().key();
        args = obj.begin().value();
    }
    name = std::string(trim(name));
    if (name.empty() || !args) return std::nullopt;

    FunctionCall call;
    call.function = std::move(name);
    for (const auto& [slot, value] : args->items()) {
        if (auto text = scalar_text(value)) call.arguments[slot] = std::move(*text);
    }
    return call;
}

std::string join_remainder(std::string_view before, std::string_view after) {
    before = trim(before);
    after = trim(after);
    if (before.empty()) return std::string(after);
    if (after.empty()) return std::string(before);
    return std::string(before) + " " + std::string(after);
}

ParseOutcome absent(std::string_view text, std::vector<Warning> warnings) {
    return ParseOutcome{std::nullopt, std::string(text), std::move(warnings)};
}

std::optional<std::string> parse_time(std::string_view value) {
    static const std::regex pattern(R"(^(\d{1,2})(?:[:.]?(\d{2}))?\s*(am|pm|a\.m\.|p\.m\.)?$)");
    std::match_results<std::string_view::const_iterator> m;
    if (!std::regex_match(value.begin(), value.end(), m, pattern)) return std::nullopt;
    const bool has_minutes = m[2].matched;
    const bool has_meridiem = m[3].matched;
    if (!has_minutes && !has_meridiem) return std::nullopt;
    int hour = std::stoi(m[1].str());
    const int minute = has_minutes ? std::stoi(m[2].str()) : 0;
    if (minute > 59) return std::nullopt;
    if (has_meridiem) {
        if (hour < 1 || hour > 12) return std::nullopt;
        const bool pm = m[3].str().front() == 'p';
        if (hour == 12) hour = 0;
        if (pm) hour += 12;
    } else if (hour > 23) {
        return std::nullopt;
    }
    std::array<char, 32> buf{};
    std::snprintf(buf.data(), buf.size(), "%02d:%02d", hour, minute);
    return std::string(buf.data());
}

}  // namespace

std::string_view to_string(WarningKind kind) {
    switch (kind) {
        case WarningKind::unknown_slot: return "unknown_slot";
        case WarningKind::bad_enum: return "bad_enum";
        case WarningKind::repaired_json: return "repaired_json";
        case WarningKind::missing_close_tag: return "missing_close_tag";
        case WarningKind::empty_call: return "empty_call";
        case WarningKind::no_selection: return "no_selection";
        case WarningKind::selection_fallback: return "selection_fallback";
        case WarningKind::unknown_function: return "unknown_function";
        case WarningKind::function_mismatch: return "function_mismatch";
        case WarningKind::backend_error: return "backend_error";
    }
    return "unknown";
}

WarningKind warning_kind_from_string(std::string_view text) {
    for (int k = 0; k <= static_cast<int>(WarningKind::backend_error); ++k) {
        const auto kind = static_cast<WarningKind>(k);
        if (to_string(kind) == text) return kind;
    }
    throw ParseError("", "unknown warning kind '" + std::string(text) + "'");
}

DomainSelection extract_domain(std::string_view text) {
    DomainSelection out;
    const auto open = text.find(kDomainOpen);
    if (open == npos) return out;
    const auto start = open + kDomainOpen.size();
    std::string_view content;
    if (const auto close = text.find(kDomainClose, start); close != npos) {
        content = trim(text.substr(start, close - start));
    } else {
        out.warnings.push_back({WarningKind::missing_close_tag, "</domain>"});
        auto rest = text.substr(start);
        while (!rest.empty() && is_space(rest.front())) rest.remove_prefix(1);
        std::size_t end = 0;
        while (end < rest.size() && !is_space(rest[end]) && rest[end] != '<') ++end;
        content = rest.substr(0, end);
    }
    while (!content.empty() && (content.front() == '"' || content.front() == '\'' || content.front() == '`'))
        content.remove_prefix(1);
    while (!content.empty() && (content.back() == '"' || content.back() == '\'' || content.back() == '`'))
        content.remove_suffix(1);
    content = trim(content);
    if (!content.empty()) out.domain = std::string(content);
    return out;
}

std::optional<nlohmann::json> read_json_object(std::string_view text, bool* repaired) {
    if (repaired) *repaired = false;
    const auto brace = text.find('{');
    if (brace == npos) return std::nullopt;
    const auto end = match_braces(text, brace);
    const auto candidate = end == npos ? text.substr(brace) : text.substr(brace, end - brace);

    auto strict = nlohmann::json::parse(candidate.begin(), candidate.end(), nullptr, false);
    if (!strict.is_discarded() && strict.is_object()) return strict;

    auto fixed = repair_json(candidate);
    if (!fixed) return std::nullopt;
    auto relaxed = nlohmann::json::parse(*fixed, nullptr, false);
    if (relaxed.is_discarded() || !relaxed.is_object()) return std::nullopt;
    if (repaired) *repaired = true;
    return relaxed;
}

ParseOutcome extract_function_call(std::string_view text) {
    const auto open = text.find(kCallOpen);
    if (open == npos) return absent(text, {});

    std::vector<Warning> warnings;
    const auto body_start = open + kCallOpen.size();
    std::string_view body;
    std::size_t span_end = 0;
    if (const auto close = text.find(kCallClose, body_start); close != npos) {
        body = text.substr(body_start, close - body_start);
        span_end = close + kCallClose.size();
    } else {
        warnings.push_back({WarningKind::missing_close_tag, "</function_call>"});
        const auto brace = text.find('{', body_start);
        if (brace == npos) {
            warnings.push_back({WarningKind::empty_call, "no JSON object after <function_call>"});
            return absent(text, std::move(warnings));
        }
        const auto end = match_braces(text, brace);
        span_end = end == npos ? text.size() : end;
        body = text.substr(body_start, span_end - body_start);
    }

    bool repaired = false;
    auto obj = read_json_object(body, &repaired);
    if (!obj) {
        warnings.push_back({WarningKind::empty_call, trim(body).empty() ? "empty call span" : "unparseable JSON"});
        return absent(text, std::move(warnings));
    }
    if (repaired) warnings.push_back({WarningKind::repaired_json, "trailing commas or unbalanced braces"});

    auto call = interpret_call(*obj);
    if (!call) {
        warnings.push_back({WarningKind::empty_call, "JSON is not a function call"});
        return absent(text, std::move(warnings));
    }
    return ParseOutcome{std::move(call), join_remainder(text.substr(0, open), text.substr(span_end)),
                        std::move(warnings)};
}

ParseOutcome validate_call(const FunctionCall& call, const FunctionSpec& spec, const ValidateOptions& options) {
    ParseOutcome out;
    FunctionCall checked;
    checked.function = call.function;
    if (call.function != spec.name && squash_name(call.function) == squash_name(spec.name))
        checked.function = spec.name;

    for (const auto& [key, value] : call.arguments) {
        const SlotSpec* slot = spec.find_slot(key);
        if (!slot) slot = spec.find_slot(lower(key));
        if (!slot) {
            out.warnings.push_back({WarningKind::unknown_slot, key});
            continue;
        }
        std::string kept = value;
        if (slot->kind == ValueKind::categorical && !is_unfilled_value(value)) {
            const auto norm = normalize_value(*slot, value);
            const bool allowed =
                norm == "dontcare" || std::any_of(slot->allowed_values.begin(), slot->allowed_values.end(),
                                                  [&](const auto& a) { return normalize_value(*slot, a) == norm; });
            if (!allowed) {
                std::string detail = slot->name + "=" + value;
                if (options.snap_enum) {
                    const std::string* best = nullptr;
                    int hits = 0;
                    for (const auto& a : slot->allowed_values) {
                        if (edit_distance(normalize_value(*slot, a), norm) <= 2) {
                            best = &a;
                            ++hits;
                        }
                    }
                    if (hits == 1) {
                        kept = *best;
                        detail += " -> " + *best;
                    }
                }
                out.warnings.push_back({WarningKind::bad_enum, detail});
            }
        }
        checked.arguments[slot->name] = kept;
    }
    out.call = std::move(checked);
    return out;
}

std::optional<std::string> snap_function_name(std::string_view candidate, const SchemaCatalog& catalog) {
    const auto key = squash_name(trim(candidate));
    if (key.empty()) return std::nullopt;
    for (const auto& spec : catalog.functions())
        if (squash_name(spec.name) == key) return spec.name;
    const auto suffix = "_" + lower(trim(candidate));
    std::optional<std::string> match;
    for (const auto& spec : catalog.functions()) {
        if (spec.name.size() > suffix.size() && spec.name.ends_with(suffix)) {
            if (match) return std::nullopt;
            match = spec.name;
        }
    }
    return match;
}

std::string normalize_value(std::string_view raw) {
    std::string out;
    bool pending_space = false;
    for (char c : trim(raw)) {
        if (is_space(c)) {
            pending_space = true;
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    static const std::array<std::string_view, 6> dontcare = {"do nt care", "don't care", "dont care",
                                                             "do not care", "do n't care", "don’t care"};
    if (std::find(dontcare.begin(), dontcare.end(), out) != dontcare.end()) return "dontcare";
    return out;
}

std::string normalize_value(const SlotSpec& slot, std::string_view raw) {
    auto out = normalize_value(raw);
    if (out == "dontcare") return out;
    if (slot.kind == ValueKind::time) {
        if (auto t = parse_time(out)) return *t;
    } else if (slot.kind == ValueKind::integer) {
        static const std::array<std::string_view, 11> words = {"zero", "one", "two", "three", "four", "five",
                                                               "six",  "seven", "eight", "nine", "ten"};
        for (std::size_t i = 0; i < words.size(); ++i)
            if (out == words[i]) return std::to_string(i);
    }
    return out;
}

ValueNormalizer catalog_normalizer(const SchemaCatalog& catalog) {
    auto shared = std::make_shared<const SchemaCatalog>(catalog);
    return [shared](std::string_view domain, std::string_view slot, std::string_view value) {
        if (const auto* spec = shared->find(domain)) {
            if (const auto* s = spec->find_slot(slot)) return normalize_value(*s, value);
        }
        return normalize_value(value);
    };
}

ValueNormalizer plain_normalizer() {
    return [](std::string_view, std::string_view, std::string_view value) { return normalize_value(value); };
}

std::size_t edit_distance(std::string_view a, std::string_view b) {
    std::vector<std::size_t> row(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        std::size_t diag = row[0];
        row[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const auto up = row[j];
            row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
            diag = up;
        }
    }
    return row[b.size()];
}

}  // namespace fcdst
