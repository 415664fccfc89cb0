#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <sstream>
#include <tuple>

#include <nlohmann/json.hpp>

#include "fcdst/error.hpp"
#include "fcdst/eval.hpp"
#include "fcdst/parse.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace fcdst;
using fcdst::testing::data_dir;
using fcdst::testing::fixture_dir;
using fcdst::testing::read_text;
using fcdst::testing::TempDir;
using fcdst::testing::write_text;

namespace {

const SchemaCatalog& catalog() {
    static const SchemaCatalog c = load_catalog_file(data_dir() / "multiwoz" / "catalog.json", CatalogFormat::native);
    return c;
}

GoldTurn gold(DialogueState state, std::set<std::string> active = {}) {
    GoldTurn g;
    g.state = std::move(state);
    g.active_domains = std::move(active);
    if (g.active_domains.empty())
        for (const auto& [d, _] : g.state.domains()) g.active_domains.insert(d);
    return g;
}

DialogueState st(const DialogueState::Domains& d) { return DialogueState(d); }

using fcdst::testing::oracle_f1;
using fcdst::testing::oracle_jga;
using fcdst::testing::random_state;

}  // namespace

TEST(JointGoalAccuracy, Examples) {
    const auto norm = plain_normalizer();
    std::vector<GoldTurn> golds = {gold(st({{"find_hotel", {{"area", "north"}}}})),
                                   gold(st({{"find_hotel", {{"area", "north"}, {"stars", "4"}}}})),
                                   gold(st({{"find_train", {{"day", "monday"}}}})), gold({})};
    std::vector<DialogueState> perfect;
    for (const auto& g : golds) perfect.push_back(g.state);
    EXPECT_EQ(joint_goal_accuracy(perfect, golds, MetricScope::overall(), norm), 1.0);

    auto half = perfect;
    half[1] = golds[0].state;
    half[3] = st({{"find_taxi", {{"destination", "ely"}}}});
    EXPECT_EQ(joint_goal_accuracy(half, golds, MetricScope::overall(), norm), 0.5);

    EXPECT_THROW(joint_goal_accuracy(std::vector<DialogueState>{}, golds, MetricScope::overall(), norm),
                 PreconditionError);
}

TEST(JointGoalAccuracy, DomainScopeCountsActiveTurnsOnly) {
    const auto norm = plain_normalizer();
    std::vector<GoldTurn> golds = {gold(st({{"find_hotel", {{"area", "north"}}}})),
                                   gold(st({{"find_hotel", {{"area", "north"}}}, {"find_train", {{"day", "monday"}}}}))};
    std::vector<DialogueState> preds = {st({{"find_hotel", {{"area", "north"}}}, {"find_train", {{"day", "friday"}}}}),
                                        st({{"find_hotel", {{"area", "north"}}}})};
    EXPECT_EQ(joint_goal_accuracy(preds, golds, MetricScope::for_domain("find_hotel"), norm), 1.0);
    EXPECT_EQ(joint_goal_accuracy(preds, golds, MetricScope::for_domain("find_train"), norm), 0.0);
    EXPECT_EQ(joint_goal_accuracy(preds, golds, MetricScope::for_domain("find_train", DomainTurnRule::all_turns), norm),
              0.0);
    EXPECT_EQ(joint_goal_accuracy(preds, golds, MetricScope::for_domain("find_taxi"), norm), std::nullopt);
    EXPECT_EQ(joint_goal_accuracy(preds, golds, MetricScope::for_domain("find_taxi", DomainTurnRule::all_turns), norm),
              1.0);
}

TEST(SlotF1, Examples) {
    const auto norm = plain_normalizer();
    const std::vector<GoldTurn> golds = {gold(st({{"find_restaurant", {{"food", "italian"}, {"area", "centre"}}}}))};
    const std::vector<DialogueState> preds = {st({{"find_restaurant", {{"food", "italian"}, {"pricerange", "cheap"}}}})};
    EXPECT_DOUBLE_EQ(*slot_f1(preds, golds, MetricScope::overall(), norm), 0.5);

    const std::vector<GoldTurn> empty_golds = {gold({}), gold({})};
    const std::vector<DialogueState> empty_preds = {{}, {}};
    EXPECT_EQ(slot_f1(empty_preds, empty_golds, MetricScope::overall(), norm), 1.0);

    const std::vector<DialogueState> extra = {st({{"find_taxi", {{"day", "x"}}}}), {}};
    EXPECT_EQ(slot_f1(extra, empty_golds, MetricScope::overall(), norm), 0.0);
}

TEST(SlotF1, IdentityAndDisjointness) {
    const auto norm = plain_normalizer();
    std::mt19937 rng(4);
    for (int i = 0; i < 200; ++i) {
        std::vector<GoldTurn> golds;
        std::vector<DialogueState> same;
        for (int t = 0; t < 5; ++t) {
            golds.push_back(gold(random_state(rng)));
            same.push_back(golds.back().state);
        }
        EXPECT_EQ(slot_f1(same, golds, MetricScope::overall(), norm), 1.0);
        bool any_gold = false;
        std::vector<DialogueState> disjoint;
        for (const auto& g : golds) {
            any_gold |= !g.state.empty();
            DialogueState::Domains d;
            for (const auto& [domain, values] : g.state.domains())
                for (const auto& [slot, _] : values) d[domain][slot] = "zzz";
            disjoint.emplace_back(d);
        }
        if (any_gold) EXPECT_EQ(slot_f1(disjoint, golds, MetricScope::overall(), norm), 0.0);
    }
}

TEST(Metrics, MatchBruteForceOracle) {
    const auto norm = plain_normalizer();
    std::mt19937 rng(99);
    for (int round = 0; round < 50; ++round) {
        const auto n = 1 + rng() % 200;
        std::vector<GoldTurn> golds;
        std::vector<DialogueState> preds;
        for (std::size_t i = 0; i < n; ++i) {
            golds.push_back(gold(random_state(rng)));
            preds.push_back(rng() % 3 ? golds.back().state : random_state(rng));
        }
        for (const std::optional<std::string> domain : {std::optional<std::string>{}, std::optional<std::string>{"find_hotel"},
                                                        std::optional<std::string>{"find_taxi"}}) {
            const auto scope = domain ? MetricScope::for_domain(*domain) : MetricScope::overall();
            const auto jga = joint_goal_accuracy(preds, golds, scope, norm);
            const auto f1 = slot_f1(preds, golds, scope, norm);
            const auto ojga = oracle_jga(preds, golds, domain);
            const auto of1 = oracle_f1(preds, golds, domain);
            ASSERT_EQ(jga.has_value(), ojga.has_value());
            ASSERT_EQ(f1.has_value(), of1.has_value());
            if (jga) EXPECT_NEAR(*jga, *ojga, 1e-12);
            if (f1) EXPECT_NEAR(*f1, *of1, 1e-12);
        }
    }
}

TEST(Metrics, OverallCorrectImpliesEveryActiveDomainCorrect) {
    const auto norm = plain_normalizer();
    std::mt19937 rng(8);
    for (int i = 0; i < 2000; ++i) {
        const auto g = gold(random_state(rng));
        const auto p = rng() % 2 ? g.state : random_state(rng);
        const std::vector<GoldTurn> golds = {g};
        const std::vector<DialogueState> preds = {p};
        if (joint_goal_accuracy(preds, golds, MetricScope::overall(), norm) != 1.0) continue;
        for (const auto& d : g.active_domains)
            EXPECT_EQ(joint_goal_accuracy(preds, golds, MetricScope::for_domain(d), norm), 1.0);
    }
}

TEST(Metrics, PermutationInvariant) {
    const auto norm = plain_normalizer();
    std::mt19937 rng(12);
    std::vector<GoldTurn> golds;
    std::vector<DialogueState> preds;
    for (int i = 0; i < 60; ++i) {
        golds.push_back(gold(random_state(rng)));
        preds.push_back(rng() % 2 ? golds.back().state : random_state(rng));
    }
    std::vector<std::size_t> order(golds.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<GoldTurn> g2;
    std::vector<DialogueState> p2;
    for (auto i : order) {
        g2.push_back(golds[i]);
        p2.push_back(preds[i]);
    }
    for (const auto& scope : {MetricScope::overall(), MetricScope::for_domain("find_train")}) {
        EXPECT_NEAR(*joint_goal_accuracy(preds, golds, scope, norm), *joint_goal_accuracy(p2, g2, scope, norm), 1e-12);
        EXPECT_NEAR(*slot_f1(preds, golds, scope, norm), *slot_f1(p2, g2, scope, norm), 1e-12);
    }
}

TEST(SuccessRate, Examples) {
    UserGoal goal{"D1", {{"find_restaurant", DomainGoal{{{"food", "thai"}}, {"phone"}, false}}}};
    const std::vector<UserGoal> goals = {goal};
    const std::vector<DialogueRun> ok = {{"D1", {"[value_name] is nice.", "Its number is [value_phone]."}}};
    EXPECT_EQ(success_rate(ok, goals).rate, 1.0);
    const std::vector<DialogueRun> missing = {{"D1", {"[value_name] is nice."}}};
    EXPECT_EQ(success_rate(missing, goals).rate, 0.0);
    EXPECT_THROW(success_rate(std::vector<DialogueRun>{}, goals), PreconditionError);
}

TEST(SuccessRate, OfferPlaceholdersBookingAndWarnings) {
    const std::vector<UserGoal> goals = {
        {"T", {{"find_train", DomainGoal{{}, {"trainID"}, true}}}},
        {"X", {{"find_taxi", DomainGoal{{}, {}, false}}}},
        {"L", {{"find_hotel", DomainGoal{{}, {"phone"}, false}}}},
    };
    const std::vector<DialogueRun> runs = {
        {"T", {"[VALUE_ID] leaves soon.", "Booked, reference [value_reference]."}},
        {"X", {"A [value_car] is booked."}},
        {"L", {"The Acorn is nice, phone 01223."}},
        {"unjudged", {"no goal"}},
    };
    const auto r = success_rate(runs, goals);
    EXPECT_EQ(r.judged, 3u);
    EXPECT_EQ(r.successes, 2u);
    ASSERT_EQ(r.warnings.size(), 1u);
    EXPECT_NE(r.warnings[0].find("L"), std::string::npos);
    EXPECT_EQ(request_placeholder("trainID"), "[value_id]");
    EXPECT_EQ(request_placeholder("ref"), "[value_reference]");
    EXPECT_EQ(request_placeholder("postcode"), "[value_postcode]");
}

TEST(LoadMultiwoz, V21Subset) {
    const auto ds = load_multiwoz(data_dir() / "multiwoz" / "subset", MultiwozVersion::v21, catalog());
    ASSERT_EQ(ds.dialogues.size(), 10u);
    EXPECT_EQ(ds.dialogues.front().dialogue_id, "SNG0101");
    EXPECT_EQ(ds.dialogues.back().dialogue_id, "PMUL0110");
    std::size_t turns = 0;
    for (const auto& d : ds.dialogues) {
        for (std::size_t i = 0; i < d.turns.size(); ++i) EXPECT_EQ(d.turns[i].turn, i);
        turns += d.turns.size();
    }
    EXPECT_EQ(turns, 33u);
    EXPECT_EQ(ds.goals.size(), 10u);
    const auto& first = ds.dialogues.front().turns.front();
    EXPECT_EQ(first.state, st({{"find_hotel", {{"area", "north"}, {"pricerange", "cheap"}, {"type", "guesthouse"}}}}));
    EXPECT_NE(first.delex_response.find("[value_area]"), std::string::npos);
    EXPECT_EQ(first.turn_domain, "find_hotel");

    // multi-domain dialogues keep every domain in their gold states
    bool saw_multi = false;
    for (const auto& d : ds.dialogues)
        if (d.turns.back().state.domains().size() >= 2) saw_multi = true;
    EXPECT_TRUE(saw_multi);
}

TEST(LoadMultiwoz, V22Fixture) {
    const auto ds = load_multiwoz(fixture_dir() / "multiwoz22", MultiwozVersion::v22, catalog());
    ASSERT_EQ(ds.dialogues.size(), 2u);
    const auto& d = ds.dialogues[0];
    EXPECT_EQ(d.dialogue_id, "MUL0001");
    ASSERT_EQ(d.turns.size(), 3u);
    EXPECT_EQ(d.turns[1].state.domain("find_hotel")->at("book_people"), "2");
    EXPECT_EQ(d.turns[2].state.domains().size(), 2u);
    EXPECT_EQ(d.turns[2].turn_domain, "find_train");
    EXPECT_EQ(d.turns[2].active_domains, (std::set<std::string>{"find_hotel", "find_train"}));
    EXPECT_EQ(d.turns[0].delex_response, "There is a cheap guesthouse called [value_name] in the centre.");
    EXPECT_EQ(d.turns[1].delex_response, "Booked! Your reference is [value_reference]. The phone is [value_phone].");
    EXPECT_EQ(ds.skipped_slots, 1u);
    ASSERT_EQ(ds.warnings.size(), 1u);
    EXPECT_NE(ds.warnings[0].find("find_hotel.colour"), std::string::npos);

    ASSERT_EQ(ds.goals.size(), 2u);
    const auto& hotel = ds.goals[0].domains.at("find_hotel");
    EXPECT_EQ(hotel.requested, std::vector<std::string>{"phone"});
    EXPECT_TRUE(hotel.has_booking);
    EXPECT_EQ(hotel.constraints.at("area"), "centre");
    EXPECT_EQ(ds.goals[1].domains.at("find_attraction").requested, std::vector<std::string>{"entrancefee"});
}

TEST(LoadMultiwoz, StructuralErrors) {
    TempDir dir("mwoz");
    write_text(dir.path() / "data.json", R"({"X.json": {"log": [{"text": "hi"}, )");
    EXPECT_THROW(load_multiwoz(dir.path(), MultiwozVersion::v21, catalog()), ParseError);
    write_text(dir.path() / "data.json", R"({"X.json": {"goal": {}}})");
    EXPECT_THROW(load_multiwoz(dir.path(), MultiwozVersion::v21, catalog()), ParseError);
    EXPECT_THROW(load_multiwoz(dir.path() / "absent", MultiwozVersion::v21, catalog()), Error);
    write_text(dir.path() / "v22" / "other.json", "[]");
    EXPECT_THROW(load_multiwoz(dir.path() / "v22", MultiwozVersion::v22, catalog()), ParseError);
}

TEST(LoadMultiwoz, TestListNamesMissingDialogue) {
    TempDir dir("list");
    write_text(dir.path() / "data.json", read_text(data_dir() / "multiwoz" / "subset" / "data.json"));
    write_text(dir.path() / "testListFile.txt", "SNG0101.json\nNOPE.json\n");
    const auto ds = load_multiwoz(dir.path(), MultiwozVersion::v21, catalog());
    EXPECT_EQ(ds.dialogues.size(), 1u);
    ASSERT_FALSE(ds.warnings.empty());
    EXPECT_NE(ds.warnings[0].find("NOPE.json"), std::string::npos);
}

TEST(BuildReport, PerfectPredictions) {
    const auto ds = load_multiwoz(data_dir() / "multiwoz" / "subset", MultiwozVersion::v21, catalog());
    std::vector<GoldDialogue> three(ds.dialogues.begin(), ds.dialogues.begin() + 3);
    std::vector<ManifestRecord> manifest;
    for (const auto& d : three)
        for (const auto& t : d.turns) manifest.push_back({d.dialogue_id, t.turn, std::nullopt, t.state, t.delex_response});
    const auto report = build_report(manifest, three, ds.goals, catalog().names(), catalog_normalizer(catalog()));
    EXPECT_EQ(report.overall_jga, 1.0);
    for (const auto& [domain, scores] : report.per_domain) {
        if (!scores.jga) continue;
        EXPECT_EQ(scores.jga, 1.0) << domain;
        EXPECT_EQ(scores.f1, 1.0) << domain;
    }
    EXPECT_EQ(report.average_jga, 1.0);
    EXPECT_EQ(report.n_dialogues, 3u);
}

TEST(BuildReport, AverageIsMeanOfDefinedDomains) {
    std::mt19937 rng(31);
    const auto norm = plain_normalizer();
    for (int round = 0; round < 30; ++round) {
        GoldDialogue d{"D", {}};
        std::vector<ManifestRecord> manifest;
        for (std::size_t t = 0; t < 6; ++t) {
            auto g = gold(random_state(rng));
            g.dialogue_id = "D";
            g.turn = t;
            d.turns.push_back(g);
            manifest.push_back({"D", t, std::nullopt, rng() % 2 ? g.state : random_state(rng), ""});
        }
        const std::vector<GoldDialogue> golds = {d};
        const auto report = build_report(manifest, golds, {}, catalog().names(), norm);
        double sum = 0;
        int n = 0;
        for (const auto& [_, s] : report.per_domain)
            if (s.jga) sum += *s.jga, ++n;
        if (n) EXPECT_NEAR(*report.average_jga, sum / n, 1e-12);
        EXPECT_FALSE(report.success.has_value());
    }
}

TEST(BuildReport, CoverageGapNamesDialogues) {
    const auto ds = load_multiwoz(data_dir() / "multiwoz" / "subset", MultiwozVersion::v21, catalog());
    std::vector<ManifestRecord> manifest;
    for (const auto& t : ds.dialogues[0].turns) manifest.push_back({"SNG0101", t.turn, std::nullopt, t.state, ""});
    manifest.pop_back();
    try {
        build_report(manifest, ds.dialogues, ds.goals, catalog().names(), plain_normalizer());
        FAIL();
    } catch (const ValidationError& e) {
        const std::string what = e.what();
        EXPECT_NE(what.find("SNG0101"), std::string::npos);
        EXPECT_NE(what.find("PMUL0110"), std::string::npos);
    }
}

TEST(BuildReport, FrozenReplayManifestReproducesFrozenReport) {
    const auto ds = load_multiwoz(data_dir() / "multiwoz" / "subset", MultiwozVersion::v21, catalog());
    const auto manifest = load_manifest(fixture_dir() / "replay" / "expected_manifest.jsonl");
    const auto report = build_report(manifest, ds.dialogues, ds.goals, catalog().names(), catalog_normalizer(catalog()));
    const auto expected = nlohmann::json::parse(read_text(fixture_dir() / "replay" / "expected_report.json"));
    EXPECT_EQ(to_json(report), expected);
}

TEST(RenderReportTable, Layout) {
    EvalReport report;
    report.per_domain = {{"find_hotel", {0.5, 0.75, 4}}, {"find_taxi", {std::nullopt, std::nullopt, 0}}};
    report.average_jga = 0.5;
    report.overall_jga = 0.25;
    const auto table = render_report_table(report, "decomposed");
    std::vector<std::string> lines;
    std::stringstream in(table);
    for (std::string line; std::getline(in, line);) lines.push_back(line);
    ASSERT_EQ(lines.size(), 3u);
    EXPECT_NE(lines[0].find("Hotel"), std::string::npos);
    EXPECT_NE(lines[0].find("Taxi"), std::string::npos);
    EXPECT_NE(lines[0].find("Success"), std::string::npos);
    EXPECT_NE(lines[1].find("Average"), std::string::npos);
    EXPECT_EQ(lines[2].rfind("decomposed", 0), 0u);
    EXPECT_NE(lines[2].find("50.00"), std::string::npos);
    EXPECT_NE(lines[2].find("75.00"), std::string::npos);
    EXPECT_NE(lines[2].find("25.00"), std::string::npos);
    EXPECT_NE(lines[2].find("-"), std::string::npos);
    // the Hotel column header starts where its JGA cell does
    EXPECT_EQ(lines[0].find("Hotel"), lines[2].find("50.00"));
}

TEST(ReportJson, NullsForUndefinedValues) {
    EvalReport report;
    report.per_domain = {{"find_taxi", {std::nullopt, std::nullopt, 0}}};
    const auto j = to_json(report);
    EXPECT_TRUE(j["per_domain"]["find_taxi"]["jga"].is_null());
    EXPECT_TRUE(j["average_jga"].is_null());
    EXPECT_TRUE(j["success"].is_null());
}
