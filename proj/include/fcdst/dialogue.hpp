#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace fcdst {

using SlotValues = std::map<std::string, std::string, std::less<>>;

/// "", "none" and "not mentioned" (any case, surrounding whitespace ignored).
bool is_unfilled_value(std::string_view value);

/// Tracked slot values per domain. Unfilled values and empty domains are never stored.
class DialogueState {
public:
    using Domains = std::map<std::string, SlotValues, std::less<>>;

    DialogueState() = default;
    explicit DialogueState(const Domains& domains);

    [[nodiscard]] const Domains& domains() const noexcept { return domains_; }
    [[nodiscard]] const SlotValues* domain(std::string_view name) const;
    [[nodiscard]] bool empty() const noexcept { return domains_.empty(); }
    [[nodiscard]] std::size_t slot_count() const;

    /// Replaces the whole entry for `domain`; the entry disappears when nothing survives filtering.
    void replace_domain(const std::string& domain, const SlotValues& values);
    void erase_domain(std::string_view domain);

    friend bool operator==(const DialogueState&, const DialogueState&) = default;

private:
    Domains domains_;
};

struct FunctionCall {
    std::string function;
    SlotValues arguments;

    friend bool operator==(const FunctionCall&, const FunctionCall&) = default;
};

struct AssistantOutput {
    std::optional<FunctionCall> call;
    std::string response;

    friend bool operator==(const AssistantOutput&, const AssistantOutput&) = default;
};

struct Turn {
    std::string user;
    std::optional<AssistantOutput> assistant;  // absent on the pending turn

    friend bool operator==(const Turn&, const Turn&) = default;
};

struct DialogueContext {
    std::vector<Turn> turns;

    /// True when the last turn carries a user utterance that has not been answered yet.
    [[nodiscard]] bool has_pending_user() const {
        return !turns.empty() && !turns.back().assistant.has_value();
    }

    friend bool operator==(const DialogueContext&, const DialogueContext&) = default;
};

/// Maps (domain, slot, raw value) to the comparison form of the value.
using ValueNormalizer = std::function<std::string(std::string_view domain, std::string_view slot,
                                                  std::string_view value)>;

/// `prev` with the entry for call.function replaced by the call's filled arguments.
DialogueState update_state(const DialogueState& prev, const FunctionCall& call);

DialogueState normalize_state(const DialogueState& state, const ValueNormalizer& normalizer);
bool states_equal(const DialogueState& a, const DialogueState& b, const ValueNormalizer& normalizer);

// Canonical JSON forms: objects with lexicographically sorted keys.
nlohmann::json to_json(const DialogueState& state);
DialogueState state_from_json(const nlohmann::json& j);
nlohmann::json to_json(const FunctionCall& call);
FunctionCall call_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DialogueContext& context);
DialogueContext context_from_json(const nlohmann::json& j);

}  // namespace fcdst
