#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fcdst/error.hpp"

namespace fcdst::cli {

/// Bad flags or inconsistent configuration; maps to exit code 2.
class UsageError : public Error {
public:
    using Error::Error;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

inline constexpr const char* kApiKeyEnv = "FNCTOD_API_KEY";

struct RunConfig {
    std::filesystem::path dataset;
    std::string dataset_version = "2.1";
    std::filesystem::path catalog;
    std::string catalog_format = "native";
    std::filesystem::path examples;
    std::filesystem::path templates;  // extra templates on top of the built-in ones
    std::string template_name = "plain";

    std::string backend = "replay";  // live | record | replay | mock
    std::string base_url = "http://localhost:8000/v1";
    std::string model = "gpt-3.5-turbo";
    std::string api_key;  // falls back to $FNCTOD_API_KEY
    std::filesystem::path store;
    std::filesystem::path mock_script;
    bool raw_completion = false;
    int timeout_seconds = 120;
    int max_retries = 3;

    std::string mode = "decomposed";
    std::string spec_rendering = "json";
    std::size_t n_shot = 0;
    bool no_prev_calls = false;
    /// A function name, or "gold" for the per-turn gold domain.
    std::string oracle_domain;
    std::optional<std::size_t> max_context_units;
    std::string fallback = "reuse_previous";
    bool snap_enum = false;

    double temperature = 0.3;
    double top_p = 0.2;
    int max_tokens = 128;

    /// "gold": later prompts see the corpus responses; "model": the model's own.
    std::string context = "gold";
    std::string domain_turns = "active";
    std::vector<std::string> dialogue_ids;
    std::optional<std::size_t> max_dialogues;

    std::filesystem::path out_dir = "fcdst_run";
    std::uint64_t seed = 0;
    std::size_t parallelism = 4;

    /// Throws UsageError for missing or contradictory settings.
    void validate_for_tracking() const;
};

struct ExportConfig {
    std::vector<std::filesystem::path> corpora;
    std::size_t per_domain = 200;
    std::uint64_t seed = 0;
    std::string template_name = "plain";
    std::filesystem::path templates;
    std::string spec_rendering = "json";
    std::vector<std::string> domains;
    std::filesystem::path out;
};

/// Tracks every selected dialogue, writes manifest.jsonl and report.json into out_dir
/// and prints the report table.
int cmd_evaluate(const RunConfig& cfg, std::ostream& out, std::ostream& err);

/// Prints the prompts of one turn without calling a backend.
int cmd_render(const RunConfig& cfg, const std::string& dialogue_id, std::size_t turn, std::ostream& out,
               std::ostream& err);

/// Line-oriented session; meta-commands /state, /reset and /quit.
int cmd_chat(const RunConfig& cfg, std::istream& in, std::ostream& out, std::ostream& err);

int cmd_export(const ExportConfig& cfg, std::ostream& out, std::ostream& err);

/// Full command line entry point; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace fcdst::cli
