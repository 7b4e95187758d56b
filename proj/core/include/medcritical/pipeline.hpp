#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "medcritical/gateway.hpp"
#include "medcritical/pipeline_config.hpp"

namespace medcritical {

enum class Stage { BuildSft, Generate, Judge, MakePairs, DpoCheck, Evaluate };

std::string_view to_string(Stage stage);  // CLI spelling: build-sft, generate, ...
Stage stage_from_string(std::string_view name);

namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;  // dpo-check battery failed, or an unexpected error
inline constexpr int kConfig = 2;
inline constexpr int kStageInput = 3;
inline constexpr int kPartialFailure = 4;
}  // namespace exit_code

// Output file names inside output_dir.
namespace artifact {
inline constexpr std::string_view kSftTrain = "sft_train.jsonl";
inline constexpr std::string_view kSftSidecar = "sft_sidecar.jsonl";
inline constexpr std::string_view kSftRejects = "sft_rejects.jsonl";
inline constexpr std::string_view kSamples = "samples.jsonl";
inline constexpr std::string_view kJudgments = "judgments.jsonl";
inline constexpr std::string_view kCorErr = "cor_err.jsonl";
inline constexpr std::string_view kPairs = "pairs.jsonl";
inline constexpr std::string_view kPairStats = "pair_stats.json";
inline constexpr std::string_view kDpoCheck = "dpo_check.json";
inline constexpr std::string_view kEvalText = "eval_report.txt";
inline constexpr std::string_view kEvalJson = "eval_report.json";
inline constexpr std::string_view kLock = ".medcritical.lock";
}  // namespace artifact

struct RunManifest {
    std::string stage;
    std::string tool_version;
    std::string config_digest;
    std::map<std::string, std::string> input_digests;   // file name -> sha256
    std::map<std::string, std::string> output_digests;  // file name -> sha256
    std::map<std::string, double> counts;
    std::string started_at;
    std::string finished_at;

    std::string to_json() const;
};

std::filesystem::path manifest_path(const std::filesystem::path& output_dir, Stage stage);

class MissingStageInput : public Error {
public:
    MissingStageInput(Stage required, const std::string& detail)
        : Error("MissingStageInput(" + std::string(to_string(required)) + "): " + detail), required_(required) {}
    Stage required() const noexcept { return required_; }

private:
    Stage required_;
};

struct StageOutcome {
    int exit_code = exit_code::kOk;
    std::optional<RunManifest> manifest;
    std::string error;       // structured summary when exit_code != 0
    std::string stdout_text; // e.g. export summaries, rendered report
};

struct RunOptions {
    // Backoff for the stage's gateway; tests shorten it.
    RetryPolicy retry;
    // Evaluate: predictions file overrides config; use_endpoint forces live mode.
    std::optional<std::filesystem::path> predictions_override;
    bool use_endpoint = false;
};

// Runs one stage; never throws for stage-level failures (they map to exit
// codes), only for programming errors.
StageOutcome run_stage(const PipelineConfig& config, Stage stage, const RunOptions& options = {});

// The verification battery behind `dpo-check`: loss identities, closed-form
// pair, gradient vs finite differences, training dynamics. Returns the JSON
// report; *passed receives the overall verdict.
std::string run_dpo_battery(std::uint64_t seed, bool* passed);

std::string tool_version();

}  // namespace medcritical
