#include "fcdst/dialogue.hpp"

#include <algorithm>
#include <cctype>

#include <nlohmann/json.hpp>

#include "fcdst/error.hpp"

namespace fcdst {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

bool iequals(std::string_view a, std::string_view b) {
    return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
               return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
           });
}

SlotValues filled_only(const SlotValues& values) {
    SlotValues out;
    for (const auto& [slot, value] : values)
        if (!slot.empty() && !is_unfilled_value(value)) out.emplace(slot, value);
    return out;
}

std::string string_field(const nlohmann::json& j, const char* key, const std::string& where) {
    auto it = j.find(key);
    if (it == j.end() || !it->is_string()) throw ParseError(where, std::string("expected string field '") + key + "'");
    return it->get<std::string>();
}

}  // namespace

bool is_unfilled_value(std::string_view value) {
    const auto v = trim(value);
    return v.empty() || iequals(v, "none") || iequals(v, "not mentioned");
}

DialogueState::DialogueState(const Domains& domains) {
    for (const auto& [name, values] : domains) replace_domain(name, values);
}

const SlotValues* DialogueState::domain(std::string_view name) const {
    auto it = domains_.find(name);
    return it == domains_.end() ? nullptr : &it->second;
}

std::size_t DialogueState::slot_count() const {
    std::size_t n = 0;
    for (const auto& [_, values] : domains_) n += values.size();
    return n;
}

void DialogueState::replace_domain(const std::string& domain, const SlotValues& values) {
    if (domain.empty()) throw PreconditionError("domain name must be non-empty");
    auto filled = filled_only(values);
    if (filled.empty()) {
        domains_.erase(domain);
    } else {
        domains_[domain] = std::move(filled);
    }
}

void DialogueState::erase_domain(std::string_view domain) {
    if (auto it = domains_.find(domain); it != domains_.end()) domains_.erase(it);
}

DialogueState update_state(const DialogueState& prev, const FunctionCall& call) {
    if (call.function.empty()) throw PreconditionError("function call without a function name");
    DialogueState next = prev;
    next.replace_domain(call.function, call.arguments);
    return next;
}

DialogueState normalize_state(const DialogueState& state, const ValueNormalizer& normalizer) {
    DialogueState out;
    for (const auto& [domain, values] : state.domains()) {
        SlotValues normalized;
        for (const auto& [slot, value] : values) normalized.emplace(slot, normalizer(domain, slot, value));
        out.replace_domain(domain, normalized);
    }
    return out;
}

bool states_equal(const DialogueState& a, const DialogueState& b, const ValueNormalizer& normalizer) {
    return normalize_state(a, normalizer) == normalize_state(b, normalizer);
}

nlohmann::json to_json(const DialogueState& state) {
    auto j = nlohmann::json::object();
    for (const auto& [domain, values] : state.domains()) {
        auto& d = j[domain] = nlohmann::json::object();
        for (const auto& [slot, value] : values) d[slot] = value;
    }
    return j;
}

DialogueState state_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ParseError("state", "expected an object");
    DialogueState::Domains domains;
    for (const auto& [domain, values] : j.items()) {
        if (!values.is_object()) throw ParseError("state." + domain, "expected an object");
        auto& slots = domains[domain];
        for (const auto& [slot, value] : values.items()) {
            if (!value.is_string()) throw ParseError("state." + domain + "." + slot, "expected a string");
            slots.emplace(slot, value.get<std::string>());
        }
    }
    return DialogueState(domains);
}

nlohmann::json to_json(const FunctionCall& call) {
    auto args = nlohmann::json::object();
    for (const auto& [slot, value] : call.arguments) args[slot] = value;
    return {{"function", call.function}, {"arguments", std::move(args)}};
}

FunctionCall call_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ParseError("call", "expected an object");
    FunctionCall call;
    call.function = string_field(j, "function", "call");
    if (auto it = j.find("arguments"); it != j.end()) {
        if (!it->is_object()) throw ParseError("call.arguments", "expected an object");
        for (const auto& [slot, value] : it->items()) {
            if (!value.is_string()) throw ParseError("call.arguments." + slot, "expected a string");
            call.arguments.emplace(slot, value.get<std::string>());
        }
    }
    if (call.function.empty()) throw ParseError("call.function", "must be non-empty");
    return call;
}

nlohmann::json to_json(const DialogueContext& context) {
    auto turns = nlohmann::json::array();
    for (const auto& turn : context.turns) {
        nlohmann::json t = {{"user", turn.user}};
        if (turn.assistant) {
            nlohmann::json a = {{"response", turn.assistant->response}};
            a["call"] = turn.assistant->call ? to_json(*turn.assistant->call) : nlohmann::json(nullptr);
            t["assistant"] = std::move(a);
        }
        turns.push_back(std::move(t));
    }
    return {{"turns", std::move(turns)}};
}

DialogueContext context_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("turns") || !j["turns"].is_array())
        throw ParseError("context", "expected an object with a 'turns' array");
    DialogueContext context;
    const auto& turns = j["turns"];
    for (std::size_t i = 0; i < turns.size(); ++i) {
        const std::string where = "turns[" + std::to_string(i) + "]";
        const auto& t = turns[i];
        if (!t.is_object()) throw ParseError(where, "expected an object");
        Turn turn;
        turn.user = string_field(t, "user", where);
        if (turn.user.empty()) throw ParseError(where + ".user", "must be non-empty");
        if (auto it = t.find("assistant"); it != t.end() && !it->is_null()) {
            AssistantOutput out;
            if (auto r = it->find("response"); r != it->end() && !r->is_null()) {
                if (!r->is_string()) throw ParseError(where + ".assistant.response", "expected a string");
                out.response = r->get<std::string>();
            }
            if (auto c = it->find("call"); c != it->end() && !c->is_null()) out.call = call_from_json(*c);
            if (!out.call && out.response.empty())
                throw ParseError(where + ".assistant", "needs a call or a non-empty response");
            turn.assistant = std::move(out);
        }
        context.turns.push_back(std::move(turn));
    }
    return context;
}

}  // namespace fcdst
