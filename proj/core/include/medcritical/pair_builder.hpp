#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "medcritical/gateway.hpp"
#include "medcritical/questions.hpp"
#include "medcritical/sft_builder.hpp"
#include "medcritical/tagged_response.hpp"
#include "medcritical/templates.hpp"

namespace medcritical {

struct StudentSample {
    std::string question_id;
    int sample_index = 0;
    std::string raw_text;
    std::optional<TaggedResponse> response;  // nullopt: unparseable or failed
    std::string error;                       // gateway or parse failure detail

    bool parseable() const noexcept { return response.has_value(); }
};

enum class Verdict { Correct, Incorrect };

std::string_view to_string(Verdict v);

struct Judgment {
    std::string question_id;
    int sample_index = 0;
    Verdict verdict = Verdict::Incorrect;
    std::string raw_judge_output;
    std::string judge_model;
};

// (q, A+, A-) for one question.
struct CorErrRecord {
    std::string question_id;
    std::vector<StudentSample> correct;
    std::vector<StudentSample> incorrect;
    int excluded = 0;  // unparseable samples plus samples the judge could not score
};

struct PreferencePair {
    std::string question_id;
    std::string prompt;
    std::string chosen;
    std::string rejected;
    int chosen_index = 0;    // sample_index of the chosen sample
    int rejected_index = 0;  // sample_index of the rejected sample
};

enum class PairStrategyKind { CartesianAll, CappedRoundRobin };

struct PairStrategy {
    PairStrategyKind kind = PairStrategyKind::CartesianAll;
    std::size_t cap = 0;  // CappedRoundRobin only

    static PairStrategy cartesian() { return {PairStrategyKind::CartesianAll, 0}; }
    static PairStrategy round_robin(std::size_t k) { return {PairStrategyKind::CappedRoundRobin, k}; }
};

enum class JudgeMode { Strict, Lenient };
enum class JudgeInput { FullResponse, AnswerOnly };

inline constexpr std::string_view kJudgeFormatReminder =
    "\n\nReply with the single digit 1 (correct) or 2 (incorrect) and nothing else.";

struct StudentOptions {
    double temperature = 0.9;
    int max_tokens = 4096;
    int parallelism = 4;
    std::optional<std::int64_t> seed_base;  // seed_hint = seed_base + sample_index
};

struct JudgeOptions {
    double temperature = 0.0;
    int max_tokens = 4;
    int parallelism = 4;
    JudgeMode mode = JudgeMode::Strict;
    JudgeInput input = JudgeInput::FullResponse;
};

class PreconditionError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

class JudgeOutputUnparseable : public Error {
public:
    explicit JudgeOutputUnparseable(std::string raw)
        : Error("JudgeOutputUnparseable: '" + raw + "'"), raw_(std::move(raw)) {}
    const std::string& raw() const noexcept { return raw_; }

private:
    std::string raw_;
};

class MissingJudgment : public Error {
public:
    MissingJudgment(std::string question_id, int sample_index)
        : Error("MissingJudgment: " + question_id + "#" + std::to_string(sample_index)),
          sample_index_(sample_index) {}
    int sample_index() const noexcept { return sample_index_; }

private:
    int sample_index_;
};

// Renders the student prompt (no reference answer). Throws PreconditionError
// when the rendered text would leak the reference answer.
PromptText render_student_prompt(const Question& q, const PromptTemplate& student_template);

// True when the reference answer is long enough that its appearance in a
// prompt is meaningful (single option labels are not).
bool answer_is_distinctive(const Question& q);

// Strict verdict rule: trimmed output "1" -> Correct, "2" -> Incorrect.
std::optional<Verdict> parse_verdict(std::string_view raw);

std::vector<StudentSample> sample_student_answers(const Question& question, int n, Gateway& gateway,
                                                  const EndpointConfig& student,
                                                  const PromptTemplate& student_template,
                                                  const StudentOptions& options = {});

// Batched form over many questions; one vector of n samples per question.
std::vector<std::vector<StudentSample>> sample_student_answers_batch(const std::vector<Question>& questions, int n,
                                                                     Gateway& gateway, const EndpointConfig& student,
                                                                     const PromptTemplate& student_template,
                                                                     const StudentOptions& options = {});

PromptText render_judge_prompt(const Question& q, const StudentSample& sample, const PromptTemplate& judge_template,
                               JudgeInput input);

// Throws JudgeOutputUnparseable (after one re-ask in lenient mode);
// GatewayError propagates. The sample must be parseable.
Judgment judge_answer(const Question& question, const StudentSample& sample, Gateway& gateway,
                      const EndpointConfig& judge, const PromptTemplate& judge_template,
                      const JudgeOptions& options = {});

struct JudgeOutcome {
    std::optional<Judgment> judgment;
    std::string raw_output;
    std::string error;  // set when no judgment
};

// Judges every parseable sample; outcomes align with `samples`, unparseable
// samples get an empty outcome without an error.
std::vector<JudgeOutcome> judge_samples(const std::vector<Question>& questions,
                                        const std::vector<StudentSample>& samples, Gateway& gateway,
                                        const EndpointConfig& judge, const PromptTemplate& judge_template,
                                        const JudgeOptions& options = {});

// Partition by verdict. Every parseable sample needs exactly one judgment
// unless listed in judge_failed (then it is excluded like an unparseable one).
CorErrRecord build_cor_err_record(const Question& question, const std::vector<StudentSample>& samples,
                                  const std::vector<Judgment>& judgments,
                                  const std::vector<int>& judge_failed = {});

std::vector<PreferencePair> make_preference_pairs(const CorErrRecord& record, PairStrategy strategy,
                                                  const std::string& prompt);

// JSONL {prompt, chosen, rejected}, ordered by (question_id, chosen index,
// rejected index).
ExportSummary export_preference_pairs(std::vector<PreferencePair> pairs, const std::filesystem::path& path);

// Pairs back from an exported file (question ids and indices are not stored).
std::vector<PreferencePair> import_preference_pairs(const std::filesystem::path& path);

// JSONL {id, correct:[{sample_index, text}], incorrect:[...], excluded}.
std::string cor_err_to_jsonl(const std::vector<CorErrRecord>& records);

}  // namespace medcritical
