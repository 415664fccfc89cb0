#include "fcdst/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <tuple>

#include <nlohmann/json.hpp>

#include "fcdst/error.hpp"

namespace fcdst {

namespace {

using ordered_json = nlohmann::ordered_json;
using Triple = std::tuple<std::string, std::string, std::string>;

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

ordered_json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    auto doc = ordered_json::parse(buffer.str(), nullptr, false);
    if (doc.is_discarded()) throw ParseError(path.string(), "malformed JSON (truncated or corrupt file)");
    return doc;
}

std::string strip_json_suffix(std::string id) {
    if (id.size() > 5 && id.ends_with(".json")) id.resize(id.size() - 5);
    return id;
}

class SlotMapper {
public:
    SlotMapper(const SchemaCatalog& catalog, Dataset& out) : catalog_(catalog), out_(out) {}

    // Adds raw (domain, slot) -> value to `state`, or counts it as skipped.
    void put(DialogueState::Domains& state, std::string_view domain, const std::string& slot,
             const ordered_json& value) {
        std::string text;
        if (value.is_string()) {
            text = value.get<std::string>();
        } else if (value.is_array() && !value.empty() && value.front().is_string()) {
            text = value.front().get<std::string>();
        } else {
            return;
        }
        if (is_unfilled_value(text)) return;
        const auto function = multiwoz_function_name(domain);
        const auto* spec = catalog_.find(function);
        if (!spec || !spec->find_slot(slot)) {
            ++out_.skipped_slots;
            ++unknown_[function + "." + slot];
            return;
        }
        state[function][slot] = text;
    }

    void flush_warnings() {
        for (const auto& [key, count] : unknown_)
            out_.warnings.push_back("skipped unknown slot " + key + " (" + std::to_string(count) + " values)");
    }

private:
    const SchemaCatalog& catalog_;
    Dataset& out_;
    std::map<std::string, std::size_t> unknown_;
};

std::optional<std::string> changed_domain(const DialogueState& prev, const DialogueState& next,
                                          const SchemaCatalog& catalog) {
    for (const auto& name : catalog.names()) {
        const auto* a = prev.domain(name);
        const auto* b = next.domain(name);
        if (!b) continue;
        if (!a || *a != *b) return name;
    }
    return std::nullopt;
}

void finalize_turn_domains(GoldDialogue& dialogue, const SchemaCatalog& catalog) {
    DialogueState prev;
    std::optional<std::string> carry;
    for (auto& turn : dialogue.turns) {
        if (!turn.turn_domain) turn.turn_domain = changed_domain(prev, turn.state, catalog);
        if (turn.turn_domain) {
            carry = turn.turn_domain;
        } else {
            turn.turn_domain = carry;
        }
        for (const auto& [domain, _] : turn.state.domains()) turn.active_domains.insert(domain);
        prev = turn.state;
    }
}

std::optional<UserGoal> goal_from_v21(const std::string& id, const ordered_json& goal, const SchemaCatalog& catalog) {
    if (!goal.is_object()) return std::nullopt;
    UserGoal out{id, {}};
    for (const auto& [domain, g] : goal.items()) {
        if (!g.is_object() || g.empty()) continue;
        const auto function = multiwoz_function_name(domain);
        if (!catalog.find(function)) continue;
        DomainGoal dg;
        if (auto info = g.find("info"); info != g.end() && info->is_object())
            for (const auto& [slot, value] : info->items())
                if (value.is_string()) dg.constraints[multiwoz_slot_name(slot)] = value.get<std::string>();
        if (auto book = g.find("book"); book != g.end() && book->is_object() && !book->empty()) {
            dg.has_booking = true;
            for (const auto& [slot, value] : book->items())
                if (value.is_string() && slot != "invalid" && slot != "pre_invalid")
                    dg.constraints[multiwoz_slot_name("book " + slot)] = value.get<std::string>();
        }
        if (auto reqt = g.find("reqt"); reqt != g.end() && reqt->is_array())
            for (const auto& r : *reqt)
                if (r.is_string()) dg.requested.push_back(lower(r.get<std::string>()));
        if (!dg.constraints.empty() || !dg.requested.empty() || dg.has_booking) out.domains[function] = std::move(dg);
    }
    return out;
}

void load_v21(const std::filesystem::path& path, const SchemaCatalog& catalog, Dataset& out) {
    std::filesystem::path data_file = path;
    std::vector<std::string> test_list;
    if (std::filesystem::is_directory(path)) {
        data_file = path / "data.json";
        std::ifstream list(path / "testListFile.txt");
        for (std::string line; std::getline(list, line);) {
            while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
            if (!line.empty()) test_list.push_back(line);
        }
    }
    const auto doc = read_json_file(data_file);
    if (!doc.is_object()) throw ParseError(data_file.string(), "expected an object of dialogues");

    std::vector<std::string> ids = test_list;
    if (ids.empty())
        for (const auto& [key, _] : doc.items()) ids.push_back(key);

    SlotMapper mapper(catalog, out);
    for (const auto& key : ids) {
        auto it = doc.find(key);
        if (it == doc.end()) {
            out.warnings.push_back("dialogue " + key + " listed for testing but missing from data");
            continue;
        }
        const auto& d = *it;
        const std::string where = data_file.string() + ":" + key;
        if (!d.is_object() || !d.contains("log") || !d["log"].is_array()) throw ParseError(where, "dialogue without a log");
        const auto& log = d["log"];
        GoldDialogue dialogue{strip_json_suffix(key), {}};
        for (std::size_t i = 0; i + 1 < log.size(); i += 2) {
            const auto& user = log[i];
            const auto& system = log[i + 1];
            if (!user.is_object() || !user.contains("text") || !system.is_object() || !system.contains("text") ||
                !system.contains("metadata") || !system["metadata"].is_object())
                throw ParseError(where + ".log[" + std::to_string(i) + "]", "malformed turn pair");
            DialogueState::Domains state;
            for (const auto& [domain, slots] : system["metadata"].items()) {
                if (!slots.is_object()) continue;
                if (auto semi = slots.find("semi"); semi != slots.end() && semi->is_object())
                    for (const auto& [slot, value] : semi->items()) mapper.put(state, domain, multiwoz_slot_name(slot), value);
                if (auto book = slots.find("book"); book != slots.end() && book->is_object())
                    for (const auto& [slot, value] : book->items())
                        if (slot != "booked") mapper.put(state, domain, multiwoz_slot_name("book " + slot), value);
            }
            GoldTurn turn;
            turn.dialogue_id = dialogue.dialogue_id;
            turn.turn = dialogue.turns.size();
            turn.state = DialogueState(state);
            turn.user = user["text"].get<std::string>();
            turn.response = system["text"].get<std::string>();
            turn.delex_response = system.value("delex_text", turn.response);
            dialogue.turns.push_back(std::move(turn));
        }
        if (dialogue.turns.empty()) continue;
        finalize_turn_domains(dialogue, catalog);
        if (auto goal = goal_from_v21(dialogue.dialogue_id, d.value("goal", ordered_json::object()), catalog))
            out.goals.push_back(std::move(*goal));
        out.dialogues.push_back(std::move(dialogue));
    }
    mapper.flush_warnings();
}

std::string delexicalize_v22(const ordered_json& turn) {
    std::string text = turn.value("utterance", std::string());
    std::vector<std::tuple<std::size_t, std::size_t, std::string>> spans;
    if (auto frames = turn.find("frames"); frames != turn.end() && frames->is_array()) {
        for (const auto& frame : *frames) {
            auto slots = frame.find("slots");
            if (slots == frame.end() || !slots->is_array()) continue;
            for (const auto& s : *slots) {
                if (!s.contains("start") || !s.contains("exclusive_end") || !s.contains("slot")) continue;
                if (!s["start"].is_number_unsigned() || !s["exclusive_end"].is_number_unsigned()) continue;
                auto name = s["slot"].get<std::string>();
                if (auto dash = name.find('-'); dash != std::string::npos) name = name.substr(dash + 1);
                spans.emplace_back(s["start"].get<std::size_t>(), s["exclusive_end"].get<std::size_t>(),
                                   request_placeholder(name));
            }
        }
    }
    std::sort(spans.begin(), spans.end(), [](const auto& a, const auto& b) { return std::get<0>(a) > std::get<0>(b); });
    std::size_t limit = text.size();
    for (const auto& [start, end, placeholder] : spans) {
        if (start >= end || end > limit) continue;  // overlapping or out of range
        text.replace(start, end - start, placeholder);
        limit = start;
    }
    return text;
}

void load_v22_dialogues(const ordered_json& doc, const std::string& where, const SchemaCatalog& catalog,
                        SlotMapper& mapper, Dataset& out) {
    if (!doc.is_array()) throw ParseError(where, "expected an array of dialogues");
    for (const auto& d : doc) {
        if (!d.is_object() || !d.contains("dialogue_id") || !d.contains("turns") || !d["turns"].is_array())
            throw ParseError(where, "dialogue without id or turns");
        GoldDialogue dialogue{strip_json_suffix(d["dialogue_id"].get<std::string>()), {}};
        UserGoal goal{dialogue.dialogue_id, {}};
        const auto& turns = d["turns"];
        for (std::size_t i = 0; i < turns.size(); ++i) {
            const auto& t = turns[i];
            if (t.value("speaker", std::string()) != "USER") continue;
            DialogueState::Domains state;
            std::optional<std::string> active;
            if (auto frames = t.find("frames"); frames != t.end() && frames->is_array()) {
                for (const auto& frame : *frames) {
                    const auto service = lower(frame.value("service", std::string()));
                    const auto function = multiwoz_function_name(service);
                    auto st = frame.find("state");
                    if (st == frame.end() || !st->is_object()) continue;
                    if (st->value("active_intent", std::string("NONE")) != "NONE" && !active && catalog.find(function))
                        active = function;
                    if (auto sv = st->find("slot_values"); sv != st->end() && sv->is_object()) {
                        for (const auto& [key, value] : sv->items()) {
                            const auto dash = key.find('-');
                            if (dash == std::string::npos) continue;
                            mapper.put(state, key.substr(0, dash), multiwoz_slot_name(key.substr(dash + 1)), value);
                        }
                    }
                    if (auto req = st->find("requested_slots"); req != st->end() && req->is_array() && catalog.find(function)) {
                        auto& dg = goal.domains[function];
                        for (const auto& r : *req) {
                            if (!r.is_string()) continue;
                            auto name = r.get<std::string>();
                            if (auto dash = name.find('-'); dash != std::string::npos) name = name.substr(dash + 1);
                            name = lower(name);
                            if (std::find(dg.requested.begin(), dg.requested.end(), name) == dg.requested.end())
                                dg.requested.push_back(name);
                        }
                    }
                }
            }
            GoldTurn turn;
            turn.dialogue_id = dialogue.dialogue_id;
            turn.turn = dialogue.turns.size();
            turn.state = DialogueState(state);
            turn.user = t.value("utterance", std::string());
            turn.turn_domain = active;
            if (i + 1 < turns.size() && turns[i + 1].value("speaker", std::string()) == "SYSTEM") {
                turn.response = turns[i + 1].value("utterance", std::string());
                turn.delex_response = delexicalize_v22(turns[i + 1]);
            }
            dialogue.turns.push_back(std::move(turn));
        }
        if (dialogue.turns.empty()) continue;
        finalize_turn_domains(dialogue, catalog);
        for (const auto& [domain, values] : dialogue.turns.back().state.domains()) {
            auto& dg = goal.domains[domain];
            for (const auto& [slot, value] : values) {
                dg.constraints[slot] = value;
                if (slot.starts_with("book_")) dg.has_booking = true;
            }
        }
        out.goals.push_back(std::move(goal));
        out.dialogues.push_back(std::move(dialogue));
    }
}

void load_v22(const std::filesystem::path& path, const SchemaCatalog& catalog, Dataset& out) {
    std::vector<std::filesystem::path> files;
    if (std::filesystem::is_directory(path)) {
        const auto dir = std::filesystem::is_directory(path / "test") ? path / "test" : path;
        for (const auto& entry : std::filesystem::directory_iterator(dir)) {
            const auto name = entry.path().filename().string();
            if (entry.is_regular_file() && name.starts_with("dialogues") && name.ends_with(".json"))
                files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        if (files.empty()) throw ParseError(dir.string(), "no dialogues_*.json files");
    } else {
        files.push_back(path);
    }
    SlotMapper mapper(catalog, out);
    for (const auto& file : files) load_v22_dialogues(read_json_file(file), file.string(), catalog, mapper, out);
    mapper.flush_warnings();
}

void require_aligned(std::span<const DialogueState> preds, std::span<const GoldTurn> golds) {
    if (preds.size() != golds.size())
        throw PreconditionError("predictions (" + std::to_string(preds.size()) + ") and gold turns (" +
                                std::to_string(golds.size()) + ") are not aligned");
}

bool in_scope(const GoldTurn& gold, const MetricScope& scope) {
    if (!scope.domain || scope.rule == DomainTurnRule::all_turns) return true;
    return gold.active_domains.contains(*scope.domain);
}

DialogueState restrict(const DialogueState& state, const MetricScope& scope) {
    if (!scope.domain) return state;
    DialogueState out;
    if (const auto* values = state.domain(*scope.domain)) out.replace_domain(*scope.domain, *values);
    return out;
}

std::set<Triple> triples(const DialogueState& state) {
    std::set<Triple> out;
    for (const auto& [domain, values] : state.domains())
        for (const auto& [slot, value] : values) out.emplace(domain, slot, value);
    return out;
}

std::string format_percent(const std::optional<double>& value) {
    if (!value) return "-";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", *value * 100.0);
    return buf;
}

std::string display_name(std::string name) {
    if (name.starts_with("find_")) name.erase(0, 5);
    if (!name.empty()) name[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(name[0])));
    return name;
}

std::string pad(std::string text, std::size_t width) {
    if (text.size() < width) text.append(width - text.size(), ' ');
    return text;
}

nlohmann::json optional_number(const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

MultiwozVersion multiwoz_version_from_string(std::string_view text) {
    if (text == "2.1") return MultiwozVersion::v21;
    if (text == "2.2") return MultiwozVersion::v22;
    throw ParseError("", "unsupported MultiWOZ version '" + std::string(text) + "'");
}

Dataset load_multiwoz(const std::filesystem::path& path, MultiwozVersion version, const SchemaCatalog& catalog) {
    if (!std::filesystem::exists(path)) throw Error("dataset path " + path.string() + " does not exist");
    Dataset out;
    if (version == MultiwozVersion::v21) {
        load_v21(path, catalog, out);
    } else {
        load_v22(path, catalog, out);
    }
    return out;
}

std::optional<double> joint_goal_accuracy(std::span<const DialogueState> preds, std::span<const GoldTurn> golds,
                                          const MetricScope& scope, const ValueNormalizer& normalizer) {
    require_aligned(preds, golds);
    std::size_t total = 0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (!in_scope(golds[i], scope)) continue;
        ++total;
        if (states_equal(restrict(preds[i], scope), restrict(golds[i].state, scope), normalizer)) ++correct;
    }
    if (total == 0) return std::nullopt;
    return static_cast<double>(correct) / static_cast<double>(total);
}

std::optional<double> slot_f1(std::span<const DialogueState> preds, std::span<const GoldTurn> golds,
                              const MetricScope& scope, const ValueNormalizer& normalizer) {
    require_aligned(preds, golds);
    std::size_t turns = 0;
    std::size_t tp = 0;
    std::size_t n_pred = 0;
    std::size_t n_gold = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (!in_scope(golds[i], scope)) continue;
        ++turns;
        const auto p = triples(normalize_state(restrict(preds[i], scope), normalizer));
        const auto g = triples(normalize_state(restrict(golds[i].state, scope), normalizer));
        n_pred += p.size();
        n_gold += g.size();
        for (const auto& t : p) tp += g.count(t);
    }
    if (turns == 0) return std::nullopt;
    if (n_pred == 0 && n_gold == 0) return 1.0;
    return 2.0 * static_cast<double>(tp) / static_cast<double>(n_pred + n_gold);
}

std::string request_placeholder(std::string_view requested_slot) {
    auto name = multiwoz_slot_name(requested_slot);
    if (name == "trainid") name = "id";
    if (name == "ref") name = "reference";
    return "[value_" + name + "]";
}

SuccessResult success_rate(std::span<const DialogueRun> runs, std::span<const UserGoal> goals,
                           const SuccessOptions& options) {
    std::map<std::string, const UserGoal*> by_id;
    for (const auto& g : goals) by_id[g.dialogue_id] = &g;

    SuccessResult out;
    for (const auto& run : runs) {
        auto it = by_id.find(run.dialogue_id);
        if (it == by_id.end()) continue;
        ++out.judged;
        std::string text;
        for (const auto& r : run.responses) text += lower(r) + "\n";

        bool requests_any = false;
        for (const auto& [_, dg] : it->second->domains) requests_any |= !dg.requested.empty() || dg.has_booking;
        if (requests_any && text.find("[value_") == std::string::npos)
            out.warnings.push_back("dialogue " + run.dialogue_id + " has no placeholders; responses look lexicalized");

        bool ok = true;
        for (const auto& [domain, dg] : it->second->domains) {
            auto offers = options.offer_placeholders.find(domain);
            const auto& accepted = offers == options.offer_placeholders.end() ? options.default_offer : offers->second;
            ok = ok && std::any_of(accepted.begin(), accepted.end(),
                                   [&](const auto& p) { return text.find(lower(p)) != std::string::npos; });
            auto needed = dg.requested;
            if (dg.has_booking) needed.push_back("reference");
            for (const auto& req : needed) ok = ok && text.find(request_placeholder(req)) != std::string::npos;
        }
        if (ok) ++out.successes;
    }
    if (out.judged == 0) throw PreconditionError("success rate is undefined without dialogues that have goals");
    out.rate = static_cast<double>(out.successes) / static_cast<double>(out.judged);
    return out;
}

ManifestRecord manifest_record_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("dialogue_id") || !j.contains("turn") || !j.contains("state"))
        throw ParseError("manifest", "record needs dialogue_id, turn and state");
    ManifestRecord r;
    r.dialogue_id = j["dialogue_id"].get<std::string>();
    r.turn = j["turn"].get<std::size_t>();
    if (auto s = j.find("selected"); s != j.end() && s->is_string()) r.selected = s->get<std::string>();
    r.state = state_from_json(j["state"]);
    if (auto resp = j.find("response"); resp != j.end() && resp->is_string()) r.response = resp->get<std::string>();
    return r;
}

std::vector<ManifestRecord> load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open manifest " + path.string());
    std::vector<ManifestRecord> out;
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) throw ParseError(path.string() + ":" + std::to_string(line_no), "malformed JSON");
        out.push_back(manifest_record_from_json(j));
    }
    return out;
}

EvalReport build_report(std::span<const ManifestRecord> manifest, std::span<const GoldDialogue> golds,
                        std::span<const UserGoal> goals, const std::vector<std::string>& domains,
                        const ValueNormalizer& normalizer, const ReportOptions& options) {
    std::map<std::pair<std::string, std::size_t>, const ManifestRecord*> index;
    for (const auto& r : manifest) index[{r.dialogue_id, r.turn}] = &r;

    std::vector<DialogueState> preds;
    std::vector<GoldTurn> flat;
    std::vector<DialogueRun> runs;
    std::vector<std::string> missing;
    for (const auto& dialogue : golds) {
        DialogueRun run{dialogue.dialogue_id, {}};
        bool complete = true;
        for (const auto& turn : dialogue.turns) {
            auto it = index.find({dialogue.dialogue_id, turn.turn});
            if (it == index.end()) {
                complete = false;
                continue;
            }
            preds.push_back(it->second->state);
            flat.push_back(turn);
            run.responses.push_back(it->second->response);
        }
        if (!complete) missing.push_back(dialogue.dialogue_id);
        runs.push_back(std::move(run));
    }
    if (!missing.empty()) {
        std::string list;
        for (const auto& id : missing) list += (list.empty() ? "" : ", ") + id;
        throw ValidationError("run manifest does not cover dialogues: " + list);
    }

    EvalReport report;
    report.n_dialogues = golds.size();
    report.n_turns = flat.size();
    double sum = 0.0;
    std::size_t defined = 0;
    for (const auto& domain : domains) {
        const auto scope = MetricScope::for_domain(domain, options.rule);
        DomainScores scores;
        scores.jga = joint_goal_accuracy(preds, flat, scope, normalizer);
        scores.f1 = slot_f1(preds, flat, scope, normalizer);
        scores.turns = static_cast<std::size_t>(
            std::count_if(flat.begin(), flat.end(), [&](const auto& g) { return in_scope(g, scope); }));
        if (scores.jga) {
            sum += *scores.jga;
            ++defined;
        }
        report.per_domain.emplace_back(domain, scores);
    }
    if (defined) report.average_jga = sum / static_cast<double>(defined);
    report.overall_jga = joint_goal_accuracy(preds, flat, MetricScope::overall(), normalizer);
    if (!goals.empty()) {
        try {
            report.success = success_rate(runs, goals, options.success).rate;
        } catch (const PreconditionError&) {
            report.success.reset();
        }
    }
    return report;
}

nlohmann::json to_json(const EvalReport& report) {
    auto per_domain = nlohmann::json::object();
    for (const auto& [domain, scores] : report.per_domain)
        per_domain[domain] = {{"jga", optional_number(scores.jga)}, {"f1", optional_number(scores.f1)}};
    return {{"per_domain", std::move(per_domain)},
            {"average_jga", optional_number(report.average_jga)},
            {"overall_jga", optional_number(report.overall_jga)},
            {"success", optional_number(report.success)},
            {"n_dialogues", report.n_dialogues},
            {"n_turns", report.n_turns}};
}

std::string render_report_table(const EvalReport& report, std::string_view label) {
    constexpr std::size_t label_width = 14;
    constexpr std::size_t cell = 8;
    std::string top = pad("", label_width);
    std::string sub = pad("", label_width);
    std::string row = pad(std::string(label), label_width);
    for (const auto& [domain, scores] : report.per_domain) {
        top += pad(display_name(domain), 2 * cell);
        sub += pad("JGA", cell) + pad("F1", cell);
        row += pad(format_percent(scores.jga), cell) + pad(format_percent(scores.f1), cell);
    }
    top += pad("JGA", 2 * cell) + "Success";
    sub += pad("Average", cell) + pad("Overall", cell);
    row += pad(format_percent(report.average_jga), cell) + pad(format_percent(report.overall_jga), cell) +
           format_percent(report.success);
    auto rtrim = [](std::string s) {
        while (!s.empty() && s.back() == ' ') s.pop_back();
        return s;
    };
    return rtrim(top) + "\n" + rtrim(sub) + "\n" + rtrim(row) + "\n";
}

}  // namespace fcdst
