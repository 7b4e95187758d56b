#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "medcritical/error.hpp"
#include "medcritical/templates.hpp"

namespace medcritical {

enum class Split { Train, Test };

std::string_view to_string(Split split);
Split split_from_string(std::string_view s);  // "train" | "test", case-insensitive

struct OptionItem {
    std::string label;
    std::string text;

    bool operator==(const OptionItem&) const = default;
};

// One benchmark item. For multiple choice, reference_answer is an option label.
struct Question {
    std::string id;
    std::string text;
    std::vector<OptionItem> options;
    std::string reference_answer;
    Split split = Split::Train;

    bool is_multiple_choice() const noexcept { return !options.empty(); }
    bool operator==(const Question&) const = default;
};

struct RejectedRow {
    std::size_t line = 0;  // 1-based physical line (CSV: record start line)
    std::string id;
    std::string reason;
};

struct LoadResult {
    std::vector<Question> questions;
    std::vector<RejectedRow> rejects;
    std::size_t train_count() const;
    std::size_t test_count() const;
};

enum class QuestionFormat { Jsonl, Csv };

QuestionFormat question_format_from_string(std::string_view s);

class FileUnreadable : public IoError {
public:
    using IoError::IoError;
};

// File-level structure is unusable (CSV header missing required columns).
class SchemaError : public Error {
public:
    using Error::Error;
};

// JSONL rows: {"id","text","options":[["A","..."],...],"answer","split"}.
// "options" may also be an object {"A":"..."}; omit it for free-text items.
// CSV: header with id,text,answer,split and optional option_<LABEL> columns.
// Malformed rows go to rejects; duplicate ids reject the later row.
LoadResult load_questions(const std::filesystem::path& path, QuestionFormat format);

// Throws SchemaError listing every offending row when any row was rejected.
void require_no_rejects(const LoadResult& result);

// user_question / question_mark bindings. Multiple-choice items put the
// options under the stem ("A. text" per line) and carry the question mark
// inside user_question.
Bindings question_bindings(const Question& q);

// RFC 4180 reader: quoted fields, doubled quotes, embedded newlines.
// Returns (start line, fields) per record.
std::vector<std::pair<std::size_t, std::vector<std::string>>> parse_csv(std::string_view data);

}  // namespace medcritical
