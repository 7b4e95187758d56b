#include <CLI11.hpp>

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "medcritical/pipeline.hpp"
#include "medcritical/pipeline_config.hpp"

namespace fs = std::filesystem;
using namespace medcritical;

int main(int argc, char** argv) {
    CLI::App app{"medcritical: teacher-distilled SFT data, student self-critique pairs, DPO checks"};
    app.set_version_flag("--version", tool_version());
    app.require_subcommand(0, 1);

    std::string config_path;
    std::string out_dir;
    std::string cache_dir;
    bool strict_judge = false;
    bool print_config = false;
    app.add_option("--config", config_path, "Pipeline YAML file")->check(CLI::ExistingFile);
    app.add_option("--out", out_dir, "Output directory (overrides output_dir)");
    app.add_option("--cache", cache_dir, "Response cache directory (overrides cache_dir)");
    app.add_flag("--strict-judge", strict_judge, "Accept only '1' or '2' from the judge, no re-ask");
    app.add_flag("--print-config", print_config, "Print the fully resolved configuration and exit");

    std::map<Stage, CLI::App*> subs;
    for (auto [stage, help] : {std::pair{Stage::BuildSft, "Stage 1: teacher reasoning chains -> SFT JSONL"},
                               std::pair{Stage::Generate, "Sample n student answers per question"},
                               std::pair{Stage::Judge, "Judge each student answer (1 correct / 2 incorrect)"},
                               std::pair{Stage::MakePairs, "Partition verdicts and write preference pairs"},
                               std::pair{Stage::DpoCheck, "Run the DPO objective verification battery"},
                               std::pair{Stage::Evaluate, "Score predictions and print the accuracy table"}}) {
        auto* sub = app.add_subcommand(std::string(to_string(stage)), help);
        sub->fallthrough();
        subs[stage] = sub;
    }
    std::string eval_questions;
    std::string eval_predictions;
    bool eval_endpoint = false;
    auto* ev = subs[Stage::Evaluate];
    ev->add_option("--questions", eval_questions, "Question file (overrides dataset.questions)")
        ->check(CLI::ExistingFile);
    auto* pred_opt = ev->add_option("--predictions", eval_predictions, "Predictions JSONL {id, raw_text}");
    ev->add_flag("--endpoint", eval_endpoint, "Query the configured evaluation endpoint instead")
        ->excludes(pred_opt);

    CLI11_PARSE(app, argc, argv);

    PipelineConfig cfg;
    try {
        if (!config_path.empty()) cfg = load_pipeline_config(config_path);
        else cfg = parse_pipeline_config("", fs::current_path());
    } catch (const Error& e) {
        std::cerr << "{\"error\":\"ConfigInvalid\",\"message\":" << std::quoted(e.what()) << "}\n";
        return exit_code::kConfig;
    }
    if (!out_dir.empty()) cfg.output_dir = fs::absolute(out_dir);
    if (!cache_dir.empty()) cfg.cache_dir = fs::absolute(cache_dir);
    if (strict_judge) cfg.judge_mode = JudgeMode::Strict;
    if (!eval_questions.empty()) cfg.questions_path = fs::absolute(eval_questions);

    if (print_config) {
        std::cout << dump_pipeline_config(cfg);
        return exit_code::kOk;
    }

    std::optional<Stage> stage;
    for (const auto& [s, sub] : subs) {
        if (sub->parsed()) stage = s;
    }
    if (!stage) {
        std::cerr << app.help();
        return exit_code::kConfig;
    }

    RunOptions options;
    if (!eval_predictions.empty()) options.predictions_override = fs::absolute(eval_predictions);
    options.use_endpoint = eval_endpoint;

    const auto outcome = run_stage(cfg, *stage, options);
    std::cout << outcome.stdout_text;
    if (outcome.exit_code != exit_code::kOk) std::cerr << outcome.error << "\n";
    return outcome.exit_code;
}
