#include <gtest/gtest.h>

// Must match the library's httplib configuration.
#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <thread>

#include <nlohmann/json.hpp>

#include "fcdst/backend.hpp"
#include "fcdst/error.hpp"
#include "test_support.hpp"

using namespace fcdst;
using fcdst::testing::TempDir;
using fcdst::testing::write_text;

namespace {

CompletionRequest sample_request() {
    CompletionRequest req;
    req.messages = {{Role::system, "You pick functions."}, {Role::user, "I need a hotel."}};
    req.model_id = "test-model";
    req.params.stop_sequences = {"</domain>"};
    return req;
}

std::string chat_payload(const std::string& text, const std::string& finish = "stop") {
    return nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", text}}}, {"finish_reason", finish}}}},
                          {"usage", {{"prompt_tokens", 12}, {"completion_tokens", 3}}}}
        .dump();
}

// Serves canned responses in order and records what it was sent.
class FakeTransport final : public HttpTransport {
public:
    struct Step {
        int status = 200;
        std::string body;
        bool transport_failure = false;
    };

    explicit FakeTransport(std::vector<Step> steps) : steps_(std::move(steps)) {}

    HttpResponse post(const std::string& path, const std::string& body,
                      const std::map<std::string, std::string>& headers) override {
        paths.push_back(path);
        bodies.push_back(body);
        last_headers = headers;
        if (calls >= steps_.size()) throw TransportError("script exhausted");
        const auto& step = steps_[calls++];
        if (step.transport_failure) throw TransportError("connection refused");
        return {step.status, step.body};
    }

    std::size_t calls = 0;
    std::vector<std::string> paths;
    std::vector<std::string> bodies;
    std::map<std::string, std::string> last_headers;

private:
    std::vector<Step> steps_;
};

struct HttpFixture {
    FakeTransport* transport = nullptr;
    std::unique_ptr<OpenAICompatibleBackend> backend;
};

HttpFixture http_backend(std::vector<FakeTransport::Step> steps, bool raw = false) {
    auto transport = std::make_unique<FakeTransport>(std::move(steps));
    HttpFixture f;
    f.transport = transport.get();
    HttpBackendOptions options;
    options.base_url = "http://example.invalid/v1";
    options.api_key = "secret";
    options.raw_completion = raw;
    options.retry.base_delay = std::chrono::milliseconds(1);
    f.backend = std::make_unique<OpenAICompatibleBackend>(options, std::move(transport));
    return f;
}

}  // namespace

TEST(GenerationParams, DefaultsAndValidation) {
    GenerationParams p;
    EXPECT_DOUBLE_EQ(p.temperature, 0.3);
    EXPECT_DOUBLE_EQ(p.top_p, 0.2);
    EXPECT_EQ(p.max_tokens, 128);
    EXPECT_NO_THROW(p.validate());
    EXPECT_THROW((GenerationParams{-0.1, 0.2, 8, {}}.validate()), ValidationError);
    EXPECT_THROW((GenerationParams{0.3, 0.0, 8, {}}.validate()), ValidationError);
    EXPECT_THROW((GenerationParams{0.3, 1.5, 8, {}}.validate()), ValidationError);
    EXPECT_THROW((GenerationParams{0.3, 0.2, 0, {}}.validate()), ValidationError);
    EXPECT_NO_THROW((GenerationParams{0.0, 1.0, 1, {}}.validate()));
}

TEST(RequestKey, StableAndSensitiveToParams) {
    const auto a = sample_request();
    EXPECT_EQ(request_key(a), request_key(sample_request()));
    EXPECT_EQ(request_key(a).size(), 64u);
    auto b = a;
    b.params.temperature = 0.7;
    EXPECT_NE(request_key(a), request_key(b));
    auto c = a;
    c.model_id = "other";
    EXPECT_NE(request_key(a), request_key(c));
    auto d = a;
    d.messages.back().content += " ";
    EXPECT_NE(request_key(a), request_key(d));
}

TEST(RequestKey, IndependentOfKeyInsertionOrder) {
    // Canonical JSON sorts keys, so a hand-built document with shuffled keys hashes the same.
    const auto req = sample_request();
    nlohmann::json shuffled;
    shuffled["params"] = {{"stop", {"</domain>"}}, {"max_tokens", 128}, {"top_p", 0.2}, {"temperature", 0.3}};
    shuffled["model_id"] = "test-model";
    shuffled["prompt"] = "";
    shuffled["messages"] = to_json(req)["messages"];
    EXPECT_EQ(sha256_hex(shuffled.dump()), request_key(req));
}

TEST(Sha256, KnownVector) {
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Complete, MockEchoAndStopTruncation) {
    ScriptedBackend mock({"<domain> hotel </domain>", "<domain> train </domain> trailing"});
    CompletionRequest plain = sample_request();
    plain.params.stop_sequences.clear();
    const auto first = complete(plain, mock);
    EXPECT_EQ(first.text, "<domain> hotel </domain>");
    EXPECT_EQ(first.finish_reason, FinishReason::stop);
    const auto second = complete(sample_request(), mock);
    EXPECT_EQ(second.text, "<domain> train ");
    EXPECT_EQ(mock.call_count(), 2u);
}

TEST(Complete, EarliestStopWins) {
    ScriptedBackend mock({"abc STOP2 def STOP1"});
    auto req = sample_request();
    req.params.stop_sequences = {"STOP1", "STOP2"};
    EXPECT_EQ(complete(req, mock).text, "abc ");
}

TEST(Complete, EmptyRequestIsRejected) {
    ScriptedBackend mock({"x"});
    EXPECT_THROW(complete(CompletionRequest{}, mock), PreconditionError);
}

TEST(ScriptedBackend, RulesByStageAndFallback) {
    ScriptedBackend mock;
    mock.add_rule({"hotel", StageHint::selection, "<domain>find_hotel</domain>"});
    mock.add_rule({"hotel", StageHint::arguments, "<function_call> {} </function_call>"});
    mock.add_rule({"broken", StageHint::any, "server down", true});
    auto sel = sample_request();
    EXPECT_EQ(mock.complete(sel).text, "<domain>find_hotel</domain>");
    auto args = sample_request();
    args.params.stop_sequences.clear();
    EXPECT_EQ(mock.complete(args).text, "<function_call> {} </function_call>");
    args.messages.back().content = "something else";
    EXPECT_THROW(mock.complete(args), BackendError);
    mock.set_fallback("fallback");
    EXPECT_EQ(mock.complete(args).text, "fallback");
    args.messages.back().content = "broken";
    try {
        mock.complete(args);
        FAIL();
    } catch (const BackendError& e) {
        EXPECT_FALSE(e.retryable());
        EXPECT_STREQ(e.what(), "server down");
    }
    EXPECT_EQ(mock.requests().size(), mock.call_count());
}

TEST(ScriptedBackend, FromFile) {
    TempDir dir("mock");
    write_text(dir.path() / "m.json", R"({"queue": ["q1"], "rules": [{"contains": "hotel", "stage": "selection",
        "text": "<domain>find_hotel</domain>"}, {"contains": "x", "text": "boom", "error": true}], "default": "d"})");
    auto mock = ScriptedBackend::from_file(dir.path() / "m.json");
    EXPECT_EQ(mock->complete(sample_request()).text, "q1");
    EXPECT_EQ(mock->complete(sample_request()).text, "<domain>find_hotel</domain>");
    auto other = sample_request();
    other.messages.back().content = "nothing";
    EXPECT_EQ(mock->complete(other).text, "d");
    other.messages.back().content = "x";
    EXPECT_THROW(mock->complete(other), BackendError);

    write_text(dir.path() / "bad.json", R"({"rules": [{"stage": "selection"}]})");
    EXPECT_THROW(ScriptedBackend::from_file(dir.path() / "bad.json"), ParseError);
}

TEST(RecordReplay, RoundTrip) {
    TempDir dir("store");
    const auto store = dir.path() / "store.jsonl";
    auto mock = std::make_shared<ScriptedBackend>(std::vector<std::string>{"<domain> hotel </domain>", "second"});
    auto recorder = record_mode(mock, store);
    auto req = sample_request();
    req.params.stop_sequences.clear();
    const auto recorded = complete(req, *recorder);
    auto req2 = req;
    req2.params.temperature = 0.9;
    const auto recorded2 = complete(req2, *recorder);

    ReplayBackend replay(store);
    EXPECT_EQ(replay.size(), 2u);
    EXPECT_EQ(complete(req, replay), recorded);
    EXPECT_EQ(complete(req2, replay), recorded2);
    EXPECT_EQ(replay.complete(req).text, "<domain> hotel </domain>");

    // every line carries the documented fields
    std::ifstream in(store);
    std::string line;
    while (std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        for (const char* key : {"key", "request", "result", "timestamp"}) EXPECT_TRUE(j.contains(key)) << key;
        EXPECT_EQ(j["key"], request_key(j["key"] == request_key(req) ? req : req2));
    }
}

TEST(RecordReplay, MissNamesTheRequestHash) {
    TempDir dir("empty");
    write_text(dir.path() / "store.jsonl", "");
    ReplayBackend replay(dir.path() / "store.jsonl");
    EXPECT_EQ(replay.size(), 0u);
    try {
        replay.complete(sample_request());
        FAIL();
    } catch (const FixtureMissingError& e) {
        EXPECT_EQ(e.key(), request_key(sample_request()));
        EXPECT_NE(std::string(e.what()).find(e.key()), std::string::npos);
    }
}

TEST(RecordReplay, MalformedStoreLineIsAParseError) {
    TempDir dir("bad");
    write_text(dir.path() / "store.jsonl", "{\"key\": \"k\", \"result\": {\"text\": \"t\"}}\nnot json\n");
    try {
        ReplayBackend replay(dir.path() / "store.jsonl");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_NE(e.where().find(":2"), std::string::npos);
    }
}

TEST(RecordReplay, UnwritableStoreFails) {
    auto mock = std::make_shared<ScriptedBackend>();
    EXPECT_THROW(record_mode(mock, "/nonexistent-dir/for/sure/store.jsonl"), Error);
}

TEST(RecordReplay, ConcurrentRecordingKeepsEveryLine) {
    TempDir dir("concurrent");
    const auto store = dir.path() / "store.jsonl";
    auto mock = std::make_shared<ScriptedBackend>();
    mock->set_fallback("ok");
    auto recorder = record_mode(mock, store);
    std::vector<std::thread> threads;
    for (int t = 0; t < 4; ++t) {
        threads.emplace_back([&, t] {
            for (int i = 0; i < 25; ++i) {
                auto req = sample_request();
                req.messages.back().content = "t" + std::to_string(t) + " i" + std::to_string(i);
                recorder->complete(req);
            }
        });
    }
    for (auto& th : threads) th.join();
    ReplayBackend replay(store);
    EXPECT_EQ(replay.size(), 100u);
}

TEST(OpenAICompatible, ChatRequestShapeAndParse) {
    auto f = http_backend({{200, chat_payload("<domain> hotel </domain>")}});
    const auto result = f.backend->complete(sample_request());
    EXPECT_EQ(result.text, "<domain> hotel </domain>");
    EXPECT_EQ(result.usage, (Usage{12, 3}));
    ASSERT_EQ(f.transport->paths.size(), 1u);
    EXPECT_EQ(f.transport->paths[0], "/v1/chat/completions");
    EXPECT_EQ(f.transport->last_headers.at("Authorization"), "Bearer secret");
    const auto body = nlohmann::json::parse(f.transport->bodies[0]);
    EXPECT_EQ(body["model"], "test-model");
    EXPECT_EQ(body["messages"].size(), 2u);
    EXPECT_EQ(body["messages"][0]["role"], "system");
    EXPECT_EQ(body["stop"], nlohmann::json::array({"</domain>"}));
    EXPECT_DOUBLE_EQ(body["temperature"].get<double>(), 0.3);
}

TEST(OpenAICompatible, RawCompletionUsesPrompt) {
    auto f = http_backend({{200, R"({"choices": [{"text": "hello", "finish_reason": "length"}]})"}}, true);
    auto req = sample_request();
    req.prompt = "<s>[INST] hi [/INST]";
    const auto result = f.backend->complete(req);
    EXPECT_EQ(result.text, "hello");
    EXPECT_EQ(result.finish_reason, FinishReason::length);
    EXPECT_EQ(f.transport->paths[0], "/v1/completions");
    EXPECT_EQ(nlohmann::json::parse(f.transport->bodies[0])["prompt"], req.prompt);
}

TEST(OpenAICompatible, RetriesOn429And5xxAndTransportErrors) {
    auto f = http_backend({{429, "slow down"}, {503, "busy"}, {0, "", true}, {200, chat_payload("ok")}});
    EXPECT_EQ(f.backend->complete(sample_request()).text, "ok");
    EXPECT_EQ(f.transport->calls, 4u);
}

TEST(OpenAICompatible, GivesUpAfterThreeRetries) {
    auto f = http_backend({{500, "a"}, {500, "b"}, {500, "c"}, {500, "d"}, {200, chat_payload("late")}});
    try {
        f.backend->complete(sample_request());
        FAIL();
    } catch (const BackendError& e) {
        EXPECT_TRUE(e.retryable());
        EXPECT_EQ(e.attempts(), 4);
    }
    EXPECT_EQ(f.transport->calls, 4u);
}

TEST(OpenAICompatible, NoRetryOnClientError) {
    auto f = http_backend({{400, "bad request"}, {200, chat_payload("never")}});
    try {
        f.backend->complete(sample_request());
        FAIL();
    } catch (const BackendError& e) {
        EXPECT_FALSE(e.retryable());
        EXPECT_EQ(e.attempts(), 1);
    }
    EXPECT_EQ(f.transport->calls, 1u);
}

TEST(OpenAICompatible, NoRetryAfterProtocolError) {
    for (const std::string body : {"not json", R"({"choices": []})", R"({"choices": [{"message": {"content": 5}}]})"}) {
        auto f = http_backend({{200, body}, {200, chat_payload("never")}});
        EXPECT_THROW(f.backend->complete(sample_request()), ProtocolError) << body;
        EXPECT_EQ(f.transport->calls, 1u);
    }
}

TEST(OpenAICompatible, LocalServerEndToEnd) {
    httplib::Server server;
    std::string seen_auth;
    nlohmann::json seen_body;
    std::atomic<int> hits{0};
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        if (hits++ == 0) {
            res.status = 503;
            res.set_content("warming up", "text/plain");
            return;
        }
        seen_auth = req.get_header_value("Authorization");
        seen_body = nlohmann::json::parse(req.body);
        res.set_content(chat_payload("<domain> find_taxi </domain> extra"), "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port, 0);
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    HttpBackendOptions options;
    options.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
    options.api_key = "k";
    options.timeout = std::chrono::seconds(5);
    options.retry.base_delay = std::chrono::milliseconds(1);
    OpenAICompatibleBackend backend(options);
    const auto result = complete(sample_request(), backend);
    server.stop();
    th.join();

    EXPECT_EQ(result.text, "<domain> find_taxi ");
    EXPECT_EQ(hits.load(), 2);
    EXPECT_EQ(seen_auth, "Bearer k");
    EXPECT_EQ(seen_body["messages"][1]["content"], "I need a hotel.");
}

TEST(OpenAICompatible, UnreachableServerIsRetryable) {
    HttpBackendOptions options;
    options.base_url = "http://127.0.0.1:1/v1";
    options.timeout = std::chrono::seconds(1);
    options.retry.max_retries = 1;
    options.retry.base_delay = std::chrono::milliseconds(1);
    OpenAICompatibleBackend backend(options);
    try {
        backend.complete(sample_request());
        FAIL();
    } catch (const BackendError& e) {
        EXPECT_TRUE(e.retryable());
        EXPECT_EQ(e.attempts(), 2);
    }
}

TEST(CompletionJson, RoundTrip) {
    const CompletionResult r{"text", FinishReason::length, Usage{1, 2}};
    EXPECT_EQ(result_from_json(to_json(r)), r);
    EXPECT_THROW(result_from_json(nlohmann::json::parse(R"({"text": "x", "finish_reason": "odd"})")), ParseError);
}
