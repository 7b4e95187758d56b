#pragma once

#include <filesystem>
#include <mutex>
#include <string>
#include <vector>

#include "medcritical/gateway.hpp"
#include "medcritical/questions.hpp"
#include "medcritical/tagged_response.hpp"
#include "medcritical/templates.hpp"

namespace medcritical {

// Appended to the teacher prompt when its previous reply did not parse.
inline constexpr std::string_view kFormatReminder =
    "\n\nYour previous reply did not follow the required format. Reply again with exactly one "
    "<think>...</think> block followed by exactly one <answer>...</answer> block and nothing else.";

enum class FreeTextMatch { Substring, Exact };

struct SftOptions {
    double temperature = 0.7;
    int max_tokens = 4096;
    int parse_retries = 2;
    int parallelism = 4;
    FreeTextMatch free_text_match = FreeTextMatch::Substring;
};

// One (q, a, c) triple: the question, its reference answer, and the teacher chain.
struct SftRecord {
    Question question;
    TaggedResponse chain;
    std::string teacher_model;
    std::string created_at;  // ISO-8601 UTC; never part of any digest
};

enum class SftRejectReason { MalformedTags, MultipleBlocks, AnswerMismatch, TemplateEcho, GatewayFailure };

std::string_view to_string(SftRejectReason reason);

struct SftReject {
    std::string question_id;
    SftRejectReason reason = SftRejectReason::MalformedTags;
    std::string detail;
};

// Thread-safe accumulator.
class RejectReport {
public:
    void add(SftReject reject);
    std::vector<SftReject> sorted() const;  // by question_id
    std::size_t size() const;

private:
    mutable std::mutex mu_;
    std::vector<SftReject> rejects_;
};

struct SftBuildResult {
    std::vector<SftRecord> records;  // input order
    std::vector<SftReject> rejects;  // by question_id
};

// True when the chain's answer names the reference answer: the extracted
// option label for multiple choice, a normalized match for free text.
bool answer_consistent(const Question& q, const TaggedResponse& chain, FreeTextMatch mode);

// Stage 1. Renders the teacher template with the reference answer embedded,
// queries the teacher, parses the tagged reply (re-asking up to
// parse_retries times), and gates on answer consistency.
// |records| + |rejects| == |questions|.
SftBuildResult build_sft_dataset(const std::vector<Question>& questions, Gateway& gateway,
                                 const EndpointConfig& teacher, const PromptTemplate& teacher_template,
                                 const SftOptions& options = {});

struct ExportSummary {
    std::filesystem::path path;
    std::size_t count = 0;
    std::string digest;
    std::filesystem::path sidecar_path;
    std::string sidecar_digest;

    std::string to_json() const;
};

// Trainer JSONL ({prompt, completion}) plus a sidecar JSONL with the raw
// fields ({id, question, options, answer, split, think, answer_text,
// teacher_model}). The prompt is rendered from the student template.
ExportSummary export_sft_records(const std::vector<SftRecord>& records, const std::filesystem::path& path,
                                 const std::filesystem::path& sidecar_path, const PromptTemplate& student_template);

std::vector<SftRecord> import_sft_sidecar(const std::filesystem::path& sidecar_path);

std::string rejects_to_jsonl(const std::vector<SftReject>& rejects);

}  // namespace medcritical
