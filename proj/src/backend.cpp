#include "fcdst/backend.hpp"

#include <algorithm>
#include <ctime>
#include <fstream>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "fcdst/error.hpp"
#include "fcdst/parse.hpp"

namespace fcdst {

namespace {

using json = nlohmann::json;

std::string canonical_dump(const json& j) { return j.dump(-1, ' ', false, json::error_handler_t::replace); }

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// "https://api.example.com/v1" -> ("https://api.example.com", "/v1")
std::pair<std::string, std::string> split_base_url(const std::string& url) {
    const auto scheme = url.find("://");
    const auto host_start = scheme == std::string::npos ? 0 : scheme + 3;
    const auto slash = url.find('/', host_start);
    if (slash == std::string::npos) return {url, ""};
    auto prefix = url.substr(slash);
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    return {url.substr(0, slash), prefix};
}

FinishReason map_finish_reason(const json& choice) {
    auto it = choice.find("finish_reason");
    if (it == choice.end() || !it->is_string()) return FinishReason::stop;
    return it->get<std::string>() == "length" ? FinishReason::length : FinishReason::stop;
}

CompletionResult parse_openai_payload(const std::string& body, bool raw, int attempts) {
    auto doc = json::parse(body, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) throw ProtocolError("server payload is not a JSON object", attempts);
    auto choices = doc.find("choices");
    if (choices == doc.end() || !choices->is_array() || choices->empty() || !choices->front().is_object())
        throw ProtocolError("server payload has no choices", attempts);
    const auto& choice = choices->front();
    CompletionResult result;
    if (raw) {
        auto text = choice.find("text");
        if (text == choice.end() || !text->is_string()) throw ProtocolError("choice has no text", attempts);
        result.text = text->get<std::string>();
    } else {
        auto message = choice.find("message");
        if (message == choice.end() || !message->is_object()) throw ProtocolError("choice has no message", attempts);
        auto content = message->find("content");
        if (content != message->end() && content->is_string()) {
            result.text = content->get<std::string>();
        } else if (content == message->end() || !content->is_null()) {
            throw ProtocolError("message content is not a string", attempts);
        }
    }
    result.finish_reason = map_finish_reason(choice);
    if (auto usage = doc.find("usage"); usage != doc.end() && usage->is_object()) {
        Usage u;
        u.prompt_units = usage->value("prompt_tokens", 0L);
        u.completion_units = usage->value("completion_tokens", 0L);
        result.usage = u;
    }
    return result;
}

StageHint stage_from_string(const std::string& text) {
    if (text == "any") return StageHint::any;
    if (text == "selection") return StageHint::selection;
    if (text == "arguments") return StageHint::arguments;
    throw ParseError("rules.stage", "unknown stage '" + text + "'");
}

}  // namespace

void GenerationParams::validate() const {
    if (!(temperature >= 0.0)) throw ValidationError("temperature must be >= 0");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw ValidationError("top_p must be in (0, 1]");
    if (max_tokens < 1) throw ValidationError("max_tokens must be >= 1");
}

std::string_view to_string(FinishReason reason) {
    switch (reason) {
        case FinishReason::stop: return "stop";
        case FinishReason::length: return "length";
        case FinishReason::error: return "error";
    }
    return "stop";
}

FinishReason finish_reason_from_string(std::string_view text) {
    if (text == "stop") return FinishReason::stop;
    if (text == "length") return FinishReason::length;
    if (text == "error") return FinishReason::error;
    throw ParseError("finish_reason", "unknown value '" + std::string(text) + "'");
}

CompletionResult complete(const CompletionRequest& request, Backend& backend) {
    if (request.messages.empty() && request.prompt.empty())
        throw PreconditionError("completion request without messages or prompt");
    auto result = backend.complete(request);
    if (result.finish_reason == FinishReason::error) return result;
    std::size_t cut = std::string::npos;
    for (const auto& stop : request.params.stop_sequences) {
        if (stop.empty()) continue;
        cut = std::min(cut, result.text.find(stop));
    }
    if (cut != std::string::npos) {
        result.text.resize(cut);
        result.finish_reason = FinishReason::stop;
    }
    return result;
}

json to_json(const CompletionRequest& request) {
    auto messages = json::array();
    for (const auto& m : request.messages)
        messages.push_back({{"role", std::string(to_string(m.role))}, {"content", m.content}});
    return {{"messages", std::move(messages)},
            {"prompt", request.prompt},
            {"model_id", request.model_id},
            {"params",
             {{"temperature", request.params.temperature},
              {"top_p", request.params.top_p},
              {"max_tokens", request.params.max_tokens},
              {"stop", request.params.stop_sequences}}}};
}

json to_json(const CompletionResult& result) {
    json j = {{"text", result.text}, {"finish_reason", std::string(to_string(result.finish_reason))}};
    if (result.usage)
        j["usage"] = {{"prompt_units", result.usage->prompt_units},
                      {"completion_units", result.usage->completion_units}};
    return j;
}

CompletionResult result_from_json(const json& j) {
    if (!j.is_object() || !j.contains("text") || !j["text"].is_string())
        throw ParseError("result", "expected an object with a text field");
    CompletionResult r;
    r.text = j["text"].get<std::string>();
    r.finish_reason = finish_reason_from_string(j.value("finish_reason", std::string("stop")));
    if (auto u = j.find("usage"); u != j.end() && u->is_object())
        r.usage = Usage{u->value("prompt_units", 0L), u->value("completion_units", 0L)};
    return r;
}

std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int length = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &length, EVP_sha256(), nullptr) != 1)
        throw Error("SHA-256 digest failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(length * 2);
    for (unsigned int i = 0; i < length; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

std::string request_key(const CompletionRequest& request) { return sha256_hex(canonical_dump(to_json(request))); }

// ---------------------------------------------------------------------------

OpenAICompatibleBackend::OpenAICompatibleBackend(HttpBackendOptions options, std::unique_ptr<HttpTransport> transport)
    : options_(std::move(options)), transport_(std::move(transport)) {
    auto [origin, prefix] = split_base_url(options_.base_url);
    path_prefix_ = prefix;
    if (!transport_) transport_ = make_http_transport(origin, options_.timeout);
}

CompletionResult OpenAICompatibleBackend::complete(const CompletionRequest& request) {
    request.params.validate();
    json body = {{"model", request.model_id},
                 {"temperature", request.params.temperature},
                 {"top_p", request.params.top_p},
                 {"max_tokens", request.params.max_tokens}};
    if (!request.params.stop_sequences.empty()) {
        auto stops = request.params.stop_sequences;
        if (stops.size() > 4) stops.resize(4);  // OpenAI accepts at most four
        body["stop"] = stops;
    }
    std::string path = path_prefix_;
    if (options_.raw_completion) {
        if (request.prompt.empty()) throw PreconditionError("raw-completion request without a prompt");
        body["prompt"] = request.prompt;
        path += "/completions";
    } else {
        auto messages = json::array();
        for (const auto& m : request.messages)
            messages.push_back({{"role", std::string(to_string(m.role))}, {"content", m.content}});
        body["messages"] = std::move(messages);
        path += "/chat/completions";
    }
    std::map<std::string, std::string> headers = {{"Content-Type", "application/json"}};
    if (!options_.api_key.empty()) headers["Authorization"] = "Bearer " + options_.api_key;
    const auto payload = canonical_dump(body);

    const int max_attempts = 1 + std::max(0, options_.retry.max_retries);
    std::string last_error;
    for (int attempt = 1; attempt <= max_attempts; ++attempt) {
        if (attempt > 1) std::this_thread::sleep_for(options_.retry.base_delay * (1 << (attempt - 2)));
        HttpResponse response;
        try {
            response = transport_->post(path, payload, headers);
        } catch (const TransportError& e) {
            last_error = e.what();
            continue;
        }
        if (response.status == 200) return parse_openai_payload(response.body, options_.raw_completion, attempt);
        const auto detail = "HTTP " + std::to_string(response.status) + ": " + response.body.substr(0, 200);
        if (response.status == 429 || response.status >= 500) {
            last_error = detail;
            continue;
        }
        throw BackendError(detail, false, attempt);
    }
    throw BackendError("giving up after " + std::to_string(max_attempts) + " attempts: " + last_error, true,
                       max_attempts);
}

// ---------------------------------------------------------------------------

ReplayBackend::ReplayBackend(const std::filesystem::path& store_path) {
    std::ifstream in(store_path);
    if (!in) {
        if (std::filesystem::exists(store_path)) throw Error("cannot read replay store " + store_path.string());
        return;
    }
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto j = json::parse(line, nullptr, false);
        const std::string where = store_path.string() + ":" + std::to_string(line_no);
        if (j.is_discarded() || !j.is_object() || !j.contains("key") || !j["key"].is_string() ||
            !j.contains("result"))
            throw ParseError(where, "malformed replay entry");
        CompletionResult result;
        try {
            result = result_from_json(j["result"]);
        } catch (const ParseError& e) {
            throw ParseError(where, e.what());
        }
        entries_.emplace(j["key"].get<std::string>(), std::move(result));
    }
}

CompletionResult ReplayBackend::complete(const CompletionRequest& request) {
    const auto key = request_key(request);
    auto it = entries_.find(key);
    if (it == entries_.end()) throw FixtureMissingError(key);
    return it->second;
}

RecordingBackend::RecordingBackend(BackendHandle inner, std::filesystem::path store_path)
    : inner_(std::move(inner)), store_path_(std::move(store_path)) {
    if (!inner_) throw PreconditionError("recording backend needs an inner backend");
    std::ofstream probe(store_path_, std::ios::app);
    if (!probe) throw Error("replay store " + store_path_.string() + " is not writable");
}

CompletionResult RecordingBackend::complete(const CompletionRequest& request) {
    auto result = inner_->complete(request);
    json line = {{"key", request_key(request)},
                 {"request", to_json(request)},
                 {"result", to_json(result)},
                 {"timestamp", utc_timestamp()}};
    std::lock_guard lock(write_mutex_);
    std::ofstream out(store_path_, std::ios::app);
    out << canonical_dump(line) << '\n';
    if (!out) throw Error("failed to append to replay store " + store_path_.string());
    return result;
}

BackendHandle record_mode(BackendHandle wrap, const std::filesystem::path& store_path) {
    return std::make_shared<RecordingBackend>(std::move(wrap), store_path);
}

// ---------------------------------------------------------------------------

bool is_selection_request(const CompletionRequest& request) {
    const auto& stops = request.params.stop_sequences;
    return std::find(stops.begin(), stops.end(), std::string(kDomainClose)) != stops.end();
}

ScriptedBackend::ScriptedBackend(std::vector<std::string> queue) {
    for (auto& text : queue) queue_.push_back({std::move(text), std::nullopt});
}

std::shared_ptr<ScriptedBackend> ScriptedBackend::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open mock script " + path.string());
    auto doc = json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw ParseError(path.string(), "invalid JSON");
    auto backend = std::make_shared<ScriptedBackend>();
    auto read_queue = [&](const json& arr) {
        if (!arr.is_array()) throw ParseError(path.string(), "queue must be an array of strings");
        for (const auto& t : arr) {
            if (!t.is_string()) throw ParseError(path.string(), "queue must be an array of strings");
            backend->enqueue(t.get<std::string>());
        }
    };
    if (doc.is_array()) {
        read_queue(doc);
        return backend;
    }
    if (!doc.is_object()) throw ParseError(path.string(), "expected an array or object");
    if (doc.contains("queue")) read_queue(doc["queue"]);
    if (doc.contains("rules")) {
        const auto& rules = doc["rules"];
        if (!rules.is_array()) throw ParseError(path.string() + ".rules", "expected an array");
        for (std::size_t i = 0; i < rules.size(); ++i) {
            const auto& r = rules[i];
            if (!r.is_object() || !r.contains("text") || !r["text"].is_string())
                throw ParseError(path.string() + ".rules[" + std::to_string(i) + "]", "rule needs a text field");
            backend->add_rule({r.value("contains", std::string()), stage_from_string(r.value("stage", std::string("any"))),
                               r["text"].get<std::string>(), r.value("error", false)});
        }
    }
    if (doc.contains("default")) {
        if (!doc["default"].is_string()) throw ParseError(path.string() + ".default", "expected a string");
        backend->set_fallback(doc["default"].get<std::string>());
    }
    return backend;
}

void ScriptedBackend::enqueue(std::string text) {
    std::lock_guard lock(mutex_);
    queue_.push_back({std::move(text), std::nullopt});
}

void ScriptedBackend::enqueue_error(std::string message, bool retryable) {
    std::lock_guard lock(mutex_);
    queue_.push_back({"", std::make_pair(std::move(message), retryable)});
}

void ScriptedBackend::add_rule(Rule rule) {
    std::lock_guard lock(mutex_);
    rules_.push_back(std::move(rule));
}

void ScriptedBackend::set_fallback(std::string text) {
    std::lock_guard lock(mutex_);
    fallback_ = std::move(text);
}

CompletionResult ScriptedBackend::complete(const CompletionRequest& request) {
    std::lock_guard lock(mutex_);
    ++calls_;
    seen_.push_back(request);
    if (next_ < queue_.size()) {
        const auto& item = queue_[next_++];
        if (item.error) throw BackendError(item.error->first, item.error->second, 1);
        return {item.text, FinishReason::stop, std::nullopt};
    }
    std::string_view last_user = request.prompt;
    for (auto it = request.messages.rbegin(); it != request.messages.rend(); ++it) {
        if (it->role == Role::user) {
            last_user = it->content;
            break;
        }
    }
    const auto stage = is_selection_request(request) ? StageHint::selection : StageHint::arguments;
    for (const auto& rule : rules_) {
        if (rule.stage != StageHint::any && rule.stage != stage) continue;
        if (!rule.contains.empty() && last_user.find(rule.contains) == std::string_view::npos) continue;
        if (rule.error) throw BackendError(rule.text, false, 1);
        return {rule.text, FinishReason::stop, std::nullopt};
    }
    if (fallback_) return {*fallback_, FinishReason::stop, std::nullopt};
    throw BackendError("scripted backend has no response for this request", false, 1);
}

std::vector<CompletionRequest> ScriptedBackend::requests() const {
    std::lock_guard lock(mutex_);
    return seen_;
}

}  // namespace fcdst
