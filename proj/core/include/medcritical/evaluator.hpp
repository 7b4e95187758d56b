#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "medcritical/error.hpp"
#include "medcritical/questions.hpp"
#include "medcritical/tagged_response.hpp"

namespace medcritical {

// Rule cascade over the answer segment:
//  1. a label token ("B", "B.", "(B)") as the whole answer or at its start
//     followed by punctuation;
//  2. an "answer is X" phrase (English or 答案是/为);
//  3. the answer equals exactly one option's text.
// First rule that yields a unique option label wins.
std::optional<std::string> extract_choice(std::string_view answer, const std::vector<OptionItem>& options);

struct Prediction {
    std::string question_id;
    std::optional<TaggedResponse> response;  // nullopt when the raw text did not parse
    std::optional<std::string> extracted_choice;
};

struct SplitScore {
    std::int64_t correct = 0;
    std::int64_t total = 0;
    double accuracy = 0.0;  // percent, rounded half-up to 2 decimals
};

struct AccuracyReport {
    std::string model_name;
    std::string base_model;
    std::map<Split, SplitScore> per_split;
    SplitScore overall;
    bool train_split_evaluated = false;
};

class UnknownQuestionId : public Error {
public:
    explicit UnknownQuestionId(const std::string& id) : Error("UnknownQuestionId: " + id) {}
};

// 100*correct/total rounded half-up to 2 decimals (exact integer arithmetic);
// 0 when total is 0.
double percent_2dp(std::int64_t correct, std::int64_t total);

// Round half-up to 2 decimals for an arbitrary percentage.
double round_2dp(double value);

// Count-weighted combination of split accuracies: sum(n_i * acc_i) / sum(n_i).
double combine_split_accuracies(const std::vector<std::pair<std::int64_t, double>>& sizes_and_accuracies);

Prediction make_prediction(const Question& q, std::string_view raw_text);

AccuracyReport score(const std::vector<Prediction>& predictions, const std::vector<Question>& questions,
                     std::string model_name = {}, std::string base_model = {});

// Fixed-width table: ModelName  BaseModel  Train  Test  Total, plus a note
// line for each report that scored train-split items.
std::string render_report(const std::vector<AccuracyReport>& reports);

std::string report_to_json(const AccuracyReport& report);

// Predictions JSONL: {"id": ..., "raw_text": ...} per line.
std::vector<std::pair<std::string, std::string>> read_predictions_file(const std::filesystem::path& path);

}  // namespace medcritical
