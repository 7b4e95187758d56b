#include "scripted.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>
#include <unistd.h>

#include "medcritical/sft_builder.hpp"
#include "medcritical/tagged_response.hpp"
#include "medcritical/templates.hpp"

namespace mctest {

namespace fs = std::filesystem;
using namespace medcritical;

fs::path fixture_dir() { return MEDCRITICAL_TEST_FIXTURES; }
fs::path fixture_questions() { return fixture_dir() / "questions20.jsonl"; }

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

bool is_judge_prompt(std::string_view prompt) { return prompt.find("Candidate answer:") != std::string_view::npos; }

}  // namespace

Script::Script() {
    auto loaded = load_questions(fixture_questions(), QuestionFormat::Jsonl);
    if (!loaded.rejects.empty()) throw std::runtime_error("fixture has rejected rows");
    questions = std::move(loaded.questions);
}

const Question* Script::find(std::string_view prompt) const {
    const Question* best = nullptr;
    for (const auto& q : questions) {
        if (prompt.find(q.text) != std::string_view::npos && (!best || q.text.size() > best->text.size())) best = &q;
    }
    return best;
}

const Question& Script::by_id(const std::string& id) const {
    for (const auto& q : questions) {
        if (q.id == id) return q;
    }
    throw std::out_of_range("no fixture question " + id);
}

std::vector<const Question*> Script::test_questions() const {
    std::vector<const Question*> out;
    for (const auto& q : questions) {
        if (q.split == Split::Test) out.push_back(&q);
    }
    return out;
}

int Script::correct_count(const std::string& id) const {
    const auto tests = test_questions();
    for (std::size_t k = 0; k < tests.size(); ++k) {
        if (tests[k]->id == id) return static_cast<int>(k % 5);
    }
    return 0;
}

bool Script::student_correct(const std::string& id, int sample_index) const {
    return sample_index < correct_count(id);
}

std::string Script::wrong_answer(const Question& q) const {
    if (q.is_multiple_choice()) {
        for (const auto& opt : q.options) {
            if (opt.label != q.reference_answer) return opt.label;
        }
    }
    return "uncertain, needs further workup";
}

std::string hinted_answer(std::string_view prompt) {
    const auto pos = prompt.find(kAnswerHintPrefix);
    if (pos == std::string_view::npos) return {};
    const auto start = pos + kAnswerHintPrefix.size();
    const auto end = prompt.find('\n', start);
    return trim(prompt.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start));
}

std::string judged_answer(std::string_view prompt) {
    const auto block = prompt.find("Candidate answer:");
    if (block == std::string_view::npos) return {};
    const auto open = prompt.find("<answer>", block);
    const auto close = prompt.find("</answer>", open);
    if (open == std::string_view::npos || close == std::string_view::npos) return {};
    return trim(prompt.substr(open + 8, close - open - 8));
}

MockReply Script::teacher_or_judge(const MockRequest& req) const {
    const Question* q = find(req.prompt);
    if (!q) return MockReply::http(400);
    if (is_judge_prompt(req.prompt)) {
        return MockReply::text(lower(judged_answer(req.prompt)) == lower(q->reference_answer) ? "1" : "2");
    }
    const bool reminded = req.prompt.find(kFormatReminder) != std::string::npos;
    if (teacher_malformed_once.count(q->id) && !reminded) {
        return MockReply::text("Let me think about this in plain prose without any tags.");
    }
    const auto hint = hinted_answer(req.prompt);
    const bool wrong = teacher_mismatch.count(q->id) > 0;
    std::string answer = wrong ? wrong_answer(*q) : hint;
    if (q->is_multiple_choice()) answer = "The answer is " + answer + ".";
    const std::string think = "First restate the question: " + q->text +
                              ". Then weigh each possibility, check for mistakes, and settle on the best one.";
    return MockReply::text(serialize_tagged(think, answer));
}

MockReply Script::student(const MockRequest& req) const {
    const Question* q = find(req.prompt);
    if (!q || !req.seed) return MockReply::http(400);
    const int idx = static_cast<int>(*req.seed - random_seed);
    if (student_unparseable.count({q->id, idx})) {
        return MockReply::text("I would say it depends, but I will not use the required format.");
    }
    const std::string answer = student_correct(q->id, idx) ? q->reference_answer : wrong_answer(*q);
    return MockReply::text(serialize_tagged("Sample " + std::to_string(idx) + ": reasoning step by step.", answer));
}

PipelineConfig fixture_config(const fs::path& work, const std::string& teacher_url, const std::string& student_url) {
    PipelineConfig cfg;
    cfg.questions_path = fixture_questions();
    cfg.teacher.base_url = teacher_url;
    cfg.teacher.model_id = "mock-teacher";
    cfg.teacher.rate_limit = 1000;
    cfg.teacher.max_retries = 2;
    cfg.student.base_url = student_url;
    cfg.student.model_id = "mock-student";
    cfg.student.rate_limit = 1000;
    cfg.student.max_retries = 2;
    cfg.judge = cfg.teacher;
    cfg.judge.role = EndpointRole::Judge;
    cfg.judge_aliases_teacher = true;
    cfg.n = 4;
    cfg.parallelism = 4;
    cfg.cache_dir = work / "cache";
    cfg.output_dir = work / "out";
    return cfg;
}

fs::path scratch_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("medcritical-test-" + std::to_string(::getpid())) / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace mctest
