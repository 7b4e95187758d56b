#include "medcritical/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "medcritical/digest.hpp"
#include "medcritical/dpo_core.hpp"
#include "medcritical/evaluator.hpp"
#include "medcritical/pair_builder.hpp"
#include "medcritical/sft_builder.hpp"

namespace medcritical {

using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string tool_version() { return MEDCRITICAL_VERSION; }

std::string_view to_string(Stage stage) {
    switch (stage) {
        case Stage::BuildSft: return "build-sft";
        case Stage::Generate: return "generate";
        case Stage::Judge: return "judge";
        case Stage::MakePairs: return "make-pairs";
        case Stage::DpoCheck: return "dpo-check";
        case Stage::Evaluate: return "evaluate";
    }
    return "unknown";
}

Stage stage_from_string(std::string_view name) {
    for (auto s : {Stage::BuildSft, Stage::Generate, Stage::Judge, Stage::MakePairs, Stage::DpoCheck,
                   Stage::Evaluate}) {
        if (to_string(s) == name) return s;
    }
    throw ConfigError("unknown stage '" + std::string(name) + "'");
}

std::string RunManifest::to_json() const {
    ojson j;
    j["stage"] = stage;
    j["tool_version"] = tool_version;
    j["config_digest"] = config_digest;
    j["inputs"] = input_digests;
    j["outputs"] = output_digests;
    j["counts"] = counts;
    j["started_at"] = started_at;
    j["finished_at"] = finished_at;
    return j.dump(2) + "\n";
}

fs::path manifest_path(const fs::path& output_dir, Stage stage) {
    return output_dir / ("manifest." + std::string(to_string(stage)) + ".json");
}

namespace {

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Lock contention is reported as a stage-input problem, not a missing stage.
class LockHeld : public Error {
public:
    using Error::Error;
};

class StageLock {
public:
    explicit StageLock(fs::path path) : path_(std::move(path)) {
        fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd_ < 0) {
            throw LockHeld("output directory is locked by another run (" + path_.string() + ")");
        }
        const auto pid = std::to_string(::getpid()) + "\n";
        [[maybe_unused]] auto n = ::write(fd_, pid.data(), pid.size());
    }
    ~StageLock() {
        ::close(fd_);
        std::error_code ec;
        fs::remove(path_, ec);
    }
    StageLock(const StageLock&) = delete;
    StageLock& operator=(const StageLock&) = delete;

private:
    fs::path path_;
    int fd_ = -1;
};

struct Context {
    const PipelineConfig& cfg;
    const RunOptions& options;
    RunManifest manifest;
    std::unique_ptr<Gateway> gateway;
    TemplateSet templates;
    std::ostringstream out;
    double failure_fraction = 0.0;

    fs::path output(std::string_view name) const { return cfg.output_dir / name; }

    Gateway& gw() {
        if (!gateway) {
            GatewayOptions go;
            go.cache_dir = cfg.cache_dir;
            go.retry = options.retry;
            go.jitter_seed = static_cast<std::uint64_t>(cfg.random_seed);
            gateway = std::make_unique<Gateway>(go);
        }
        return *gateway;
    }

    void record_input(const fs::path& path) { manifest.input_digests[path.filename().string()] = sha256_file(path); }
    void record_output(const fs::path& path) {
        manifest.output_digests[path.filename().string()] = sha256_file(path);
    }
    void write_output(std::string_view name, std::string_view body) {
        const auto p = output(name);
        write_file_atomic(p, body);
        record_output(p);
    }
};

void require_file(const fs::path& path, Stage producer, const char* what) {
    if (!fs::is_regular_file(path)) {
        throw MissingStageInput(producer, std::string(what) + " not found: " + path.string());
    }
}

std::vector<Question> load_all_questions(Context& ctx) {
    if (ctx.cfg.questions_path.empty() || !fs::is_regular_file(ctx.cfg.questions_path)) {
        throw ConfigError("dataset.questions: file not found: " + ctx.cfg.questions_path.string());
    }
    auto loaded = load_questions(ctx.cfg.questions_path, ctx.cfg.questions_format);
    ctx.record_input(ctx.cfg.questions_path);
    ctx.manifest.counts["questions"] = static_cast<double>(loaded.questions.size());
    ctx.manifest.counts["question_rejects"] = static_cast<double>(loaded.rejects.size());
    return std::move(loaded.questions);
}

std::vector<Question> stage2_questions(Context& ctx) {
    auto all = load_all_questions(ctx);
    if (ctx.cfg.stage2_split == Stage2Split::All) return all;
    const Split want = ctx.cfg.stage2_split == Stage2Split::Train ? Split::Train : Split::Test;
    std::erase_if(all, [&](const Question& q) { return q.split != want; });
    return all;
}

void validate_common(const PipelineConfig& cfg) {
    if (cfg.n < 2) throw ConfigError("sampling.n must be >= 2");
    if (cfg.parallelism < 1) throw ConfigError("sampling.parallelism must be >= 1");
    if (cfg.parse_retries < 0) throw ConfigError("sft.parse_retries must be >= 0");
    if (!(cfg.failure_threshold >= 0.0 && cfg.failure_threshold <= 1.0)) {
        throw ConfigError("failure_threshold must lie in [0, 1]");
    }
    if (cfg.template_manifest && !fs::is_regular_file(*cfg.template_manifest)) {
        throw ConfigError("templates.manifest: file not found: " + cfg.template_manifest->string());
    }
    if (cfg.pairing.kind == PairStrategyKind::CappedRoundRobin && cfg.pairing.cap == 0) {
        throw ConfigError("pairing.cap must be >= 1 for round_robin");
    }
}

const EndpointConfig& endpoint_for(const PipelineConfig& cfg, EndpointRole role) {
    switch (role) {
        case EndpointRole::Teacher: return cfg.teacher;
        case EndpointRole::Student: return cfg.student;
        case EndpointRole::Judge: return cfg.judge;
    }
    return cfg.student;
}

// ---- samples.jsonl / judgments.jsonl -------------------------------------

std::string samples_to_jsonl(const std::vector<StudentSample>& samples) {
    std::string body;
    for (const auto& s : samples) {
        ojson j;
        j["id"] = s.question_id;
        j["sample_index"] = s.sample_index;
        j["raw_text"] = s.raw_text;
        j["parseable"] = s.parseable();
        j["error"] = s.error;
        body += j.dump() + "\n";
    }
    return body;
}

template <typename Fn>
void for_each_jsonl(const fs::path& path, Fn&& fn) {
    std::istringstream in(read_file(path));
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            fn(ojson::parse(line));
        } catch (const nlohmann::json::exception& e) {
            throw Error(path.filename().string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

std::vector<StudentSample> read_samples(const fs::path& path) {
    std::vector<StudentSample> out;
    for_each_jsonl(path, [&](const ojson& j) {
        StudentSample s;
        s.question_id = j.at("id").get<std::string>();
        s.sample_index = j.at("sample_index").get<int>();
        s.raw_text = j.at("raw_text").get<std::string>();
        s.error = j.value("error", std::string());
        if (s.error.empty()) {
            std::string why;
            s.response = try_parse_tagged_response(s.raw_text, &why);
            if (!s.response) s.error = why;
        }
        out.push_back(std::move(s));
    });
    return out;
}

struct JudgmentRow {
    std::string question_id;
    int sample_index = 0;
    std::optional<Judgment> judgment;
};

std::vector<JudgmentRow> read_judgments(const fs::path& path) {
    std::vector<JudgmentRow> out;
    for_each_jsonl(path, [&](const ojson& j) {
        JudgmentRow row;
        row.question_id = j.at("id").get<std::string>();
        row.sample_index = j.at("sample_index").get<int>();
        if (!j.at("verdict").is_null()) {
            const auto v = j.at("verdict").get<std::string>();
            Judgment jd{row.question_id, row.sample_index,
                        v == "correct" ? Verdict::Correct : Verdict::Incorrect,
                        j.value("raw", std::string()), j.value("judge_model", std::string())};
            if (v != "correct" && v != "incorrect") throw Error("judgments: bad verdict '" + v + "'");
            row.judgment = std::move(jd);
        }
        out.push_back(std::move(row));
    });
    return out;
}

// ---- stages ----------------------------------------------------------------

void run_build_sft(Context& ctx) {
    ctx.cfg.teacher.validate();
    auto questions = load_all_questions(ctx);
    if (questions.empty()) throw ConfigError("dataset has no valid questions");

    SftOptions opts;
    opts.temperature = ctx.cfg.teacher_decoding.temperature;
    opts.max_tokens = ctx.cfg.teacher_decoding.max_tokens;
    opts.parse_retries = ctx.cfg.parse_retries;
    opts.parallelism = ctx.cfg.parallelism;
    opts.free_text_match = ctx.cfg.free_text_match;
    auto result = build_sft_dataset(questions, ctx.gw(), ctx.cfg.teacher,
                                    ctx.templates.get(TemplateKind::TeacherCot), opts);

    const auto train = ctx.output(artifact::kSftTrain);
    const auto sidecar = ctx.output(artifact::kSftSidecar);
    if (result.records.empty()) {
        write_file_atomic(train, "");
        write_file_atomic(sidecar, "");
    } else {
        const auto summary =
            export_sft_records(result.records, train, sidecar, ctx.templates.get(TemplateKind::StudentCot));
        ctx.out << summary.to_json();
    }
    ctx.record_output(train);
    ctx.record_output(sidecar);
    ctx.write_output(artifact::kSftRejects, rejects_to_jsonl(result.rejects));

    ctx.manifest.counts["records"] = static_cast<double>(result.records.size());
    ctx.manifest.counts["rejects"] = static_cast<double>(result.rejects.size());
    for (const auto& r : result.rejects) {
        ctx.manifest.counts["rejects." + std::string(to_string(r.reason))] += 1;
    }
    ctx.failure_fraction = static_cast<double>(result.rejects.size()) / static_cast<double>(questions.size());
}

void run_generate(Context& ctx) {
    ctx.cfg.student.validate();
    const auto questions = stage2_questions(ctx);
    if (questions.empty()) {
        throw ConfigError("no questions in split '" + std::string(to_string(ctx.cfg.stage2_split)) + "'");
    }
    StudentOptions opts;
    opts.temperature = ctx.cfg.student_decoding.temperature;
    opts.max_tokens = ctx.cfg.student_decoding.max_tokens;
    opts.parallelism = ctx.cfg.parallelism;
    opts.seed_base = ctx.cfg.random_seed;
    const auto batches = sample_student_answers_batch(questions, ctx.cfg.n, ctx.gw(), ctx.cfg.student,
                                                      ctx.templates.get(TemplateKind::StudentCot), opts);
    std::vector<StudentSample> flat;
    std::size_t failed = 0;
    for (const auto& batch : batches) {
        for (const auto& s : batch) {
            if (!s.parseable()) ++failed;
            flat.push_back(s);
        }
    }
    ctx.write_output(artifact::kSamples, samples_to_jsonl(flat));
    ctx.manifest.counts["samples"] = static_cast<double>(flat.size());
    ctx.manifest.counts["unparseable"] = static_cast<double>(failed);
    ctx.failure_fraction = flat.empty() ? 0.0 : static_cast<double>(failed) / static_cast<double>(flat.size());
    ojson summary{{"samples", flat.size()}, {"unparseable", failed}};
    ctx.out << summary.dump() << "\n";
}

void run_judge(Context& ctx) {
    const auto samples_path = ctx.output(artifact::kSamples);
    require_file(samples_path, Stage::Generate, "samples");
    ctx.cfg.judge.validate();
    const auto questions = stage2_questions(ctx);
    const auto samples = read_samples(samples_path);
    ctx.record_input(samples_path);

    JudgeOptions opts;
    opts.temperature = ctx.cfg.judge_decoding.temperature;
    opts.max_tokens = ctx.cfg.judge_decoding.max_tokens;
    opts.parallelism = ctx.cfg.parallelism;
    opts.mode = ctx.cfg.judge_mode;
    opts.input = ctx.cfg.judge_input;
    const auto outcomes =
        judge_samples(questions, samples, ctx.gw(), ctx.cfg.judge, ctx.templates.get(TemplateKind::Judge), opts);

    std::string body;
    std::size_t judged = 0, failed = 0, correct = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (!samples[i].parseable()) continue;
        ++judged;
        const auto& o = outcomes[i];
        ojson j;
        j["id"] = samples[i].question_id;
        j["sample_index"] = samples[i].sample_index;
        if (o.judgment) {
            j["verdict"] = std::string(to_string(o.judgment->verdict));
            if (o.judgment->verdict == Verdict::Correct) ++correct;
        } else {
            j["verdict"] = nullptr;
            ++failed;
        }
        j["raw"] = o.raw_output;
        j["judge_model"] = ctx.cfg.judge.model_id;
        j["error"] = o.error;
        body += j.dump() + "\n";
    }
    ctx.write_output(artifact::kJudgments, body);
    ctx.manifest.counts["judged"] = static_cast<double>(judged);
    ctx.manifest.counts["correct"] = static_cast<double>(correct);
    ctx.manifest.counts["judge_failures"] = static_cast<double>(failed);
    ctx.failure_fraction = judged == 0 ? 0.0 : static_cast<double>(failed) / static_cast<double>(judged);
    ojson summary{{"judged", judged}, {"correct", correct}, {"incorrect", judged - correct - failed},
                  {"judge_failures", failed}};
    ctx.out << summary.dump() << "\n";
}

void run_make_pairs(Context& ctx) {
    const auto judgments_path = ctx.output(artifact::kJudgments);
    require_file(judgments_path, Stage::Judge, "judgments");
    const auto samples_path = ctx.output(artifact::kSamples);
    require_file(samples_path, Stage::Generate, "samples");
    const auto questions = stage2_questions(ctx);
    const auto samples = read_samples(samples_path);
    const auto rows = read_judgments(judgments_path);
    ctx.record_input(samples_path);
    ctx.record_input(judgments_path);

    std::map<std::string, std::vector<StudentSample>, std::less<>> samples_by_q;
    for (const auto& s : samples) samples_by_q[s.question_id].push_back(s);
    std::map<std::string, std::vector<Judgment>, std::less<>> judgments_by_q;
    std::map<std::string, std::vector<int>, std::less<>> failed_by_q;
    std::size_t judge_failures = 0;
    for (const auto& r : rows) {
        if (r.judgment) {
            judgments_by_q[r.question_id].push_back(*r.judgment);
        } else {
            failed_by_q[r.question_id].push_back(r.sample_index);
            ++judge_failures;
        }
    }

    const auto& student_tmpl = ctx.templates.get(TemplateKind::StudentCot);
    std::vector<CorErrRecord> records;
    std::vector<PreferencePair> pairs;
    ojson per_question = ojson::array();
    for (const auto& q : questions) {
        auto it = samples_by_q.find(q.id);
        if (it == samples_by_q.end()) continue;
        auto record = build_cor_err_record(q, it->second, judgments_by_q[q.id], failed_by_q[q.id]);
        const auto prompt = render_student_prompt(q, student_tmpl).text;
        auto qpairs = make_preference_pairs(record, ctx.cfg.pairing, prompt);
        per_question.push_back({{"id", q.id},
                                {"correct", record.correct.size()},
                                {"incorrect", record.incorrect.size()},
                                {"excluded", record.excluded},
                                {"pairs", qpairs.size()}});
        pairs.insert(pairs.end(), std::make_move_iterator(qpairs.begin()), std::make_move_iterator(qpairs.end()));
        records.push_back(std::move(record));
    }

    ctx.write_output(artifact::kCorErr, cor_err_to_jsonl(records));
    const auto summary = export_preference_pairs(pairs, ctx.output(artifact::kPairs));
    ctx.record_output(summary.path);

    ojson stats;
    stats["questions"] = records.size();
    stats["pairs"] = pairs.size();
    stats["judge_parse_failure_rate"] =
        rows.empty() ? 0.0 : static_cast<double>(judge_failures) / static_cast<double>(rows.size());
    stats["per_question"] = per_question;
    ctx.write_output(artifact::kPairStats, stats.dump(2) + "\n");

    ctx.manifest.counts["pairs"] = static_cast<double>(pairs.size());
    ctx.manifest.counts["questions_with_pairs"] = static_cast<double>(
        std::count_if(per_question.begin(), per_question.end(), [](const ojson& j) { return j["pairs"] > 0; }));
    ctx.out << summary.to_json();
}

bool run_dpo_check(Context& ctx) {
    bool passed = false;
    const auto report = run_dpo_battery(static_cast<std::uint64_t>(ctx.cfg.random_seed), &passed);
    ctx.write_output(artifact::kDpoCheck, report);
    ctx.manifest.counts["passed"] = passed ? 1.0 : 0.0;
    ctx.out << report;
    return passed;
}

void run_evaluate(Context& ctx) {
    const auto questions = load_all_questions(ctx);
    std::map<std::string, const Question*, std::less<>> by_id;
    for (const auto& q : questions) by_id.emplace(q.id, &q);

    std::optional<fs::path> predictions = ctx.options.predictions_override;
    if (!predictions && !ctx.options.use_endpoint) predictions = ctx.cfg.predictions_path;

    std::vector<Prediction> preds;
    std::size_t failed = 0;
    if (predictions) {
        if (!fs::is_regular_file(*predictions)) {
            throw MissingStageInput(Stage::Generate, "predictions file not found: " + predictions->string());
        }
        ctx.record_input(*predictions);
        for (const auto& [id, raw] : read_predictions_file(*predictions)) {
            auto it = by_id.find(id);
            if (it == by_id.end()) throw UnknownQuestionId(id);
            preds.push_back(make_prediction(*it->second, raw));
        }
    } else {
        const auto& ep = endpoint_for(ctx.cfg, ctx.cfg.eval_endpoint);
        ep.validate();
        const auto& tmpl = ctx.templates.get(TemplateKind::StudentCot);
        std::vector<CompletionRequest> requests;
        for (const auto& q : questions) {
            CompletionRequest r;
            r.prompt = render_student_prompt(q, tmpl);
            r.temperature = ctx.cfg.eval_decoding.temperature;
            r.max_tokens = ctx.cfg.eval_decoding.max_tokens;
            requests.push_back(std::move(r));
        }
        const auto results = ctx.gw().complete_batch(ep, requests, ctx.cfg.parallelism);
        for (std::size_t i = 0; i < questions.size(); ++i) {
            if (!results[i].ok()) ++failed;
            preds.push_back(make_prediction(questions[i], results[i].ok() ? results[i].text : std::string()));
        }
        ctx.failure_fraction = questions.empty() ? 0.0 : static_cast<double>(failed) / questions.size();
    }

    const auto report = score(preds, questions, ctx.cfg.eval_model_name, ctx.cfg.eval_base_model);
    const auto table = render_report({report});
    ctx.write_output(artifact::kEvalText, table);
    ctx.write_output(artifact::kEvalJson, report_to_json(report));
    ctx.manifest.counts["predictions"] = static_cast<double>(preds.size());
    ctx.manifest.counts["accuracy"] = report.overall.accuracy;
    ctx.manifest.counts["endpoint_failures"] = static_cast<double>(failed);
    ctx.out << table;
}

ojson error_report(std::string_view kind, const std::string& message) {
    return ojson{{"error", kind}, {"message", message}};
}

}  // namespace

StageOutcome run_stage(const PipelineConfig& config, Stage stage, const RunOptions& options) {
    StageOutcome outcome;
    Context ctx{config, options, {}, nullptr, {}, {}, 0.0};
    ctx.manifest.stage = std::string(to_string(stage));
    ctx.manifest.tool_version = tool_version();
    ctx.manifest.config_digest = sha256_hex(dump_pipeline_config(config));
    ctx.manifest.started_at = utc_now();

    auto fail = [&](int code, std::string_view kind, const std::string& message) {
        outcome.exit_code = code;
        outcome.error = error_report(kind, message).dump();
        return outcome;
    };

    try {
        validate_common(config);
        if (config.template_manifest) ctx.templates = TemplateSet::load_manifest(*config.template_manifest);
        fs::create_directories(config.output_dir);
    } catch (const MissingStageInput& e) {
        return fail(exit_code::kStageInput, "MissingStageInput", e.what());
    } catch (const ConfigError& e) {
        return fail(exit_code::kConfig, "ConfigInvalid", e.what());
    } catch (const std::exception& e) {
        return fail(exit_code::kConfig, "ConfigInvalid", e.what());
    }

    try {
        StageLock lock(config.output_dir / artifact::kLock);
        bool ok = true;
        switch (stage) {
            case Stage::BuildSft: run_build_sft(ctx); break;
            case Stage::Generate: run_generate(ctx); break;
            case Stage::Judge: run_judge(ctx); break;
            case Stage::MakePairs: run_make_pairs(ctx); break;
            case Stage::DpoCheck: ok = run_dpo_check(ctx); break;
            case Stage::Evaluate: run_evaluate(ctx); break;
        }
        if (ctx.gateway) {
            ctx.manifest.counts["network_calls"] = static_cast<double>(ctx.gateway->network_calls());
            ctx.manifest.counts["cache_hits"] = static_cast<double>(ctx.gateway->cache_hits());
        }
        ctx.manifest.finished_at = utc_now();
        write_file_atomic(manifest_path(config.output_dir, stage), ctx.manifest.to_json());
        outcome.manifest = ctx.manifest;
        outcome.stdout_text = ctx.out.str();
        if (!ok) return fail(exit_code::kFailure, "DpoCheckFailed", "verification battery failed");
        if (ctx.failure_fraction > config.failure_threshold) {
            char buf[128];
            std::snprintf(buf, sizeof buf, "%.1f%% of items failed (threshold %.1f%%)",
                          100.0 * ctx.failure_fraction, 100.0 * config.failure_threshold);
            return fail(exit_code::kPartialFailure, "PartialFailure", buf);
        }
        return outcome;
    } catch (const LockHeld& e) {
        return fail(exit_code::kStageInput, "OutputLocked", e.what());
    } catch (const MissingStageInput& e) {
        return fail(exit_code::kStageInput, "MissingStageInput", e.what());
    } catch (const UnknownQuestionId& e) {
        return fail(exit_code::kStageInput, "UnknownQuestionId", e.what());
    } catch (const SchemaError& e) {
        return fail(exit_code::kStageInput, "SchemaError", e.what());
    } catch (const FileUnreadable& e) {
        return fail(exit_code::kStageInput, "FileUnreadable", e.what());
    } catch (const ConfigError& e) {
        return fail(exit_code::kConfig, "ConfigInvalid", e.what());
    } catch (const std::exception& e) {
        return fail(exit_code::kFailure, "StageError", e.what());
    }
}

// ---- dpo-check battery -----------------------------------------------------

namespace {

struct Instance {
    dpo::ToyPolicy theta;
    dpo::ToyPolicy ref;
    std::vector<dpo::ToyPair> pairs;
    double beta = 0.1;
};

Instance random_instance(std::mt19937_64& rng, bool theta_is_ref) {
    std::uniform_int_distribution<std::size_t> prompts(1, 4), completions(2, 8), npairs(1, 8);
    std::uniform_real_distribution<double> logit(-3.0, 3.0);
    const double betas[] = {0.1, 0.5, 1.0};
    Instance inst;
    const auto p = prompts(rng), c = completions(rng);
    inst.theta = dpo::ToyPolicy(p, c);
    inst.ref = dpo::ToyPolicy(p, c);
    for (auto& v : inst.theta.logits().values()) v = logit(rng);
    if (theta_is_ref) {
        inst.ref = inst.theta;
    } else {
        for (auto& v : inst.ref.logits().values()) v = logit(rng);
    }
    inst.beta = betas[std::uniform_int_distribution<int>(0, 2)(rng)];
    const auto n = npairs(rng);
    for (std::size_t i = 0; i < n; ++i) {
        std::uniform_int_distribution<std::size_t> pick_p(0, p - 1), pick_c(0, c - 1);
        dpo::ToyPair pair{pick_p(rng), pick_c(rng), 0};
        do pair.rejected_id = pick_c(rng);
        while (pair.rejected_id == pair.chosen_id);
        inst.pairs.push_back(pair);
    }
    return inst;
}

struct Check {
    std::string name;
    bool passed;
    double value;
    double tolerance;
};

}  // namespace

std::string run_dpo_battery(std::uint64_t seed, bool* passed) {
    using namespace dpo;
    std::mt19937_64 rng(seed);
    std::vector<Check> checks;
    const double ln2 = std::log(2.0);

    // loss(theta, theta) and loss at beta = 0 are ln 2 for any pairs.
    double worst_same = 0.0, worst_beta0 = 0.0;
    for (int i = 0; i < 50; ++i) {
        auto inst = random_instance(rng, true);
        worst_same = std::max(worst_same, std::abs(dpo_loss(inst.theta, inst.theta, inst.pairs, inst.beta).loss - ln2));
        auto other = random_instance(rng, false);
        worst_beta0 = std::max(worst_beta0, std::abs(dpo_loss(other.theta, other.ref, other.pairs, 0.0).loss - ln2));
    }
    checks.push_back({"loss_equals_ln2_when_theta_is_ref", worst_same <= 1e-12, worst_same, 1e-12});
    checks.push_back({"loss_equals_ln2_at_beta_zero", worst_beta0 <= 1e-12, worst_beta0, 1e-12});

    {
        Matrix t(1, 2), r(1, 2);
        t(0, 0) = std::log(0.7);
        t(0, 1) = std::log(0.3);
        r(0, 0) = std::log(0.5);
        r(0, 1) = std::log(0.5);
        const double loss = dpo_loss(ToyPolicy(t), ToyPolicy(r), {{0, 0, 1}}, 1.0).loss;
        const double err = std::abs(loss + std::log(0.7));
        checks.push_back({"closed_form_single_pair", err <= 1e-10, err, 1e-10});
    }

    double worst_grad = 0.0;
    for (int i = 0; i < 100; ++i) {
        const auto inst = random_instance(rng, false);
        const auto analytic = dpo_gradient(inst.theta, inst.ref, inst.pairs, inst.beta);
        const auto numeric = finite_difference_gradient(
            [&](const ToyPolicy& p) { return dpo_loss(p, inst.ref, inst.pairs, inst.beta).loss; }, inst.theta, 1e-5);
        worst_grad = std::max(worst_grad, max_relative_error(analytic, numeric));
    }
    checks.push_back({"gradient_matches_finite_differences", worst_grad < 1e-6, worst_grad, 1e-6});

    {
        // Consistent preferences: one preferred completion per prompt.
        double worst_sigma = 1.0;
        bool monotone = true;
        for (int i = 0; i < 10; ++i) {
            auto inst = random_instance(rng, true);
            const auto c = inst.theta.completions();
            std::vector<ToyPair> pairs;
            for (std::size_t p = 0; p < inst.theta.prompts(); ++p) {
                const std::size_t best = std::uniform_int_distribution<std::size_t>(0, c - 1)(rng);
                for (std::size_t k = 0; k < c; ++k) {
                    if (k != best) pairs.push_back({p, best, k});
                }
            }
            const auto trained = train_toy_dpo(inst.theta, inst.ref, pairs, {1.0, 0.5, 200});
            for (std::size_t s = 1; s < trained.history.size(); ++s) {
                if (trained.history[s].loss > trained.history[s - 1].loss + 1e-12) monotone = false;
            }
            const auto final_report = dpo_loss(trained.policy, inst.ref, pairs, 1.0);
            for (double s : final_report.sigmas) worst_sigma = std::min(worst_sigma, s);
        }
        checks.push_back({"training_loss_non_increasing", monotone, monotone ? 0.0 : 1.0, 0.0});
        checks.push_back({"training_final_sigma_above_0.9", worst_sigma > 0.9, worst_sigma, 0.9});
    }

    {
        // Symmetric conflicting pairs cancel: the gradient is zero at theta == ref.
        auto inst = random_instance(rng, true);
        std::vector<ToyPair> pairs{{0, 0, 1}, {0, 1, 0}};
        const auto trained = train_toy_dpo(inst.theta, inst.ref, pairs, {1.0, 0.5, 200});
        const double err = std::abs(dpo_loss(trained.policy, inst.ref, pairs, 1.0).loss - ln2);
        checks.push_back({"conflicting_pairs_stay_at_ln2", err <= 1e-9, err, 1e-9});
    }

    {
        // Shifting a whole row of theta and ref by the same constant leaves the loss unchanged.
        auto inst = random_instance(rng, false);
        const double before = dpo_loss(inst.theta, inst.ref, inst.pairs, inst.beta).loss;
        for (auto& v : inst.theta.logits().row(0)) v += 1.75;
        for (auto& v : inst.ref.logits().row(0)) v += 1.75;
        const double err = std::abs(dpo_loss(inst.theta, inst.ref, inst.pairs, inst.beta).loss - before);
        checks.push_back({"row_shift_invariance", err <= 1e-10, err, 1e-10});
    }

    bool all = true;
    ojson j;
    j["seed"] = seed;
    j["checks"] = ojson::array();
    for (const auto& c : checks) {
        all = all && c.passed;
        j["checks"].push_back({{"name", c.name}, {"passed", c.passed}, {"value", c.value}, {"tolerance", c.tolerance}});
    }
    j["passed"] = all;
    if (passed) *passed = all;
    return j.dump(2) + "\n";
}

}  // namespace medcritical
