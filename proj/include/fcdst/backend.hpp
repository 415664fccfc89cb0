#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fcdst/prompt.hpp"

namespace fcdst {

/// Sampling settings; defaults are the evaluation settings (temperature 0.3, top_p 0.2, 128 tokens).
struct GenerationParams {
    double temperature = 0.3;
    double top_p = 0.2;
    int max_tokens = 128;
    std::vector<std::string> stop_sequences;

    /// Throws ValidationError.
    void validate() const;

    friend bool operator==(const GenerationParams&, const GenerationParams&) = default;
};

struct CompletionRequest {
    std::vector<ChatMessage> messages;
    /// Pre-templated text for raw-completion endpoints; empty for chat endpoints.
    std::string prompt;
    GenerationParams params;
    std::string model_id;
};

enum class FinishReason { stop, length, error };

std::string_view to_string(FinishReason reason);
FinishReason finish_reason_from_string(std::string_view text);

struct Usage {
    long prompt_units = 0;
    long completion_units = 0;

    friend bool operator==(const Usage&, const Usage&) = default;
};

struct CompletionResult {
    std::string text;
    FinishReason finish_reason = FinishReason::stop;
    std::optional<Usage> usage;

    friend bool operator==(const CompletionResult&, const CompletionResult&) = default;
};

/// Completion source. Implementations must tolerate concurrent complete() calls.
class Backend {
public:
    virtual ~Backend() = default;
    virtual CompletionResult complete(const CompletionRequest& request) = 0;
};

using BackendHandle = std::shared_ptr<Backend>;

/// Runs `backend` and cuts the text at the first stop sequence, whether or not the server did.
CompletionResult complete(const CompletionRequest& request, Backend& backend);

nlohmann::json to_json(const CompletionRequest& request);
nlohmann::json to_json(const CompletionResult& result);
CompletionResult result_from_json(const nlohmann::json& j);

/// Hex SHA-256 of the canonical JSON of {messages, prompt, params, model_id}.
std::string request_key(const CompletionRequest& request);
std::string sha256_hex(std::string_view data);

// ---------------------------------------------------------------------------
// OpenAI-compatible HTTP backend

struct HttpResponse {
    int status = 0;
    std::string body;
};

/// Connection-level failure (DNS, refused, timeout). Always retryable.
class TransportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class HttpTransport {
public:
    virtual ~HttpTransport() = default;
    virtual HttpResponse post(const std::string& path, const std::string& body,
                              const std::map<std::string, std::string>& headers) = 0;
};

struct RetryPolicy {
    int max_retries = 3;
    std::chrono::milliseconds base_delay{500};
};

struct HttpBackendOptions {
    std::string base_url = "http://localhost:8000/v1";
    std::string api_key;
    bool raw_completion = false;
    std::chrono::seconds timeout{120};
    RetryPolicy retry;
};

/// cpp-httplib transport for `base_url` (http or https). Opens one connection per request,
/// so it is safe to share between threads.
std::unique_ptr<HttpTransport> make_http_transport(const std::string& base_url, std::chrono::seconds timeout);

class OpenAICompatibleBackend final : public Backend {
public:
    explicit OpenAICompatibleBackend(HttpBackendOptions options, std::unique_ptr<HttpTransport> transport = nullptr);

    CompletionResult complete(const CompletionRequest& request) override;

    [[nodiscard]] const HttpBackendOptions& options() const noexcept { return options_; }

private:
    HttpBackendOptions options_;
    std::string path_prefix_;
    std::unique_ptr<HttpTransport> transport_;
};

// ---------------------------------------------------------------------------
// Record / replay

/// Read-only view over a JSON-lines store of {key, request, result, timestamp}.
class ReplayBackend final : public Backend {
public:
    explicit ReplayBackend(const std::filesystem::path& store_path);

    CompletionResult complete(const CompletionRequest& request) override;

    [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }

private:
    std::map<std::string, CompletionResult> entries_;
};

/// Forwards to `inner` and appends every exchange to the store.
class RecordingBackend final : public Backend {
public:
    RecordingBackend(BackendHandle inner, std::filesystem::path store_path);

    CompletionResult complete(const CompletionRequest& request) override;

private:
    BackendHandle inner_;
    std::filesystem::path store_path_;
    std::mutex write_mutex_;
};

BackendHandle record_mode(BackendHandle wrap, const std::filesystem::path& store_path);

// ---------------------------------------------------------------------------
// Scripted mock

enum class StageHint { any, selection, arguments };

/// Canned responses for tests and offline runs.
///
/// Queued texts are served first-in first-out. Once the queue is empty, rules are
/// tried in order: a rule matches when its `contains` text occurs in the last user
/// message and its stage agrees with the request (selection requests are the ones
/// that stop at "</domain>"). Without a match the fallback text is returned, or an
/// error is raised when there is none.
class ScriptedBackend final : public Backend {
public:
    struct Rule {
        std::string contains;
        StageHint stage = StageHint::any;
        std::string text;
        /// Raise a non-retryable BackendError carrying `text` instead of answering.
        bool error = false;
    };

    ScriptedBackend() = default;
    explicit ScriptedBackend(std::vector<std::string> queue);

    /// JSON file: either an array of texts (queue) or {"queue": [...], "rules": [...], "default": "..."}.
    /// A rule is {"contains", "stage": "any"|"selection"|"arguments", "text", "error": bool}.
    static std::shared_ptr<ScriptedBackend> from_file(const std::filesystem::path& path);

    void enqueue(std::string text);
    void enqueue_error(std::string message, bool retryable = true);
    void add_rule(Rule rule);
    void set_fallback(std::string text);

    CompletionResult complete(const CompletionRequest& request) override;

    [[nodiscard]] std::size_t call_count() const noexcept { return calls_.load(); }
    [[nodiscard]] std::vector<CompletionRequest> requests() const;
    void reset_count() { calls_ = 0; }

private:
    struct Item {
        std::string text;
        std::optional<std::pair<std::string, bool>> error;
    };
    mutable std::mutex mutex_;
    std::vector<Item> queue_;
    std::size_t next_ = 0;
    std::vector<Rule> rules_;
    std::optional<std::string> fallback_;
    std::vector<CompletionRequest> seen_;
    std::atomic<std::size_t> calls_{0};
};

/// True for requests issued by the function-selection stage.
bool is_selection_request(const CompletionRequest& request);

}  // namespace fcdst
