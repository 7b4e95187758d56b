#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "medcritical/gateway.hpp"
#include "medcritical/pair_builder.hpp"
#include "medcritical/questions.hpp"
#include "medcritical/sft_builder.hpp"

namespace medcritical {

enum class Stage2Split { Test, Train, All };

struct Decoding {
    double temperature = 0.0;
    int max_tokens = 1024;
};

// Everything a pipeline run needs. Relative paths in the YAML file resolve
// against the file's directory.
struct PipelineConfig {
    std::filesystem::path questions_path;
    QuestionFormat questions_format = QuestionFormat::Jsonl;
    std::optional<std::filesystem::path> template_manifest;

    EndpointConfig teacher = EndpointConfig::for_role(EndpointRole::Teacher);
    EndpointConfig student = EndpointConfig::for_role(EndpointRole::Student);
    EndpointConfig judge = EndpointConfig::for_role(EndpointRole::Judge);
    bool judge_aliases_teacher = true;

    int n = 4;
    int parallelism = 4;
    Stage2Split stage2_split = Stage2Split::Test;

    Decoding teacher_decoding{0.7, 4096};
    Decoding student_decoding{0.9, 4096};
    Decoding judge_decoding{0.0, 4};
    Decoding eval_decoding{0.0, 4096};

    int parse_retries = 2;
    FreeTextMatch free_text_match = FreeTextMatch::Substring;
    JudgeMode judge_mode = JudgeMode::Strict;
    JudgeInput judge_input = JudgeInput::FullResponse;
    PairStrategy pairing = PairStrategy::cartesian();

    double beta = 0.1;
    double dpo_learning_rate = 0.5;
    int dpo_steps = 200;

    std::optional<std::filesystem::path> predictions_path;
    std::string eval_model_name = "student";
    std::string eval_base_model;
    EndpointRole eval_endpoint = EndpointRole::Student;

    std::filesystem::path cache_dir = "cache";
    std::filesystem::path output_dir = "out";
    std::int64_t random_seed = 0;
    double failure_threshold = 0.2;
};

// Parses YAML; throws ConfigError on unknown enum values or type errors.
// Missing keys keep their defaults.
PipelineConfig load_pipeline_config(const std::filesystem::path& path);
PipelineConfig parse_pipeline_config(std::string_view yaml, const std::filesystem::path& base_dir);

// Fully resolved configuration (defaults included) as YAML.
std::string dump_pipeline_config(const PipelineConfig& config);

std::string_view to_string(Stage2Split split);

}  // namespace medcritical
