#include "medcritical/pair_builder.hpp"

#include <json.hpp>

#include <algorithm>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "medcritical/digest.hpp"

namespace medcritical {

using ojson = nlohmann::ordered_json;

namespace {

std::string trim_ws(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

CompletionRequest student_request(const PromptText& prompt, int index, const StudentOptions& options) {
    CompletionRequest req;
    req.prompt = prompt;
    req.temperature = options.temperature;
    req.max_tokens = options.max_tokens;
    req.sample_index = index;
    if (options.seed_base) req.seed_hint = *options.seed_base + index;
    return req;
}

StudentSample to_sample(const std::string& question_id, int index, const CompletionResult& res) {
    StudentSample s;
    s.question_id = question_id;
    s.sample_index = index;
    if (!res.ok()) {
        s.error = res.error_message;
        return s;
    }
    s.raw_text = res.text;
    s.response = try_parse_tagged_response(res.text, &s.error);
    return s;
}

CompletionRequest judge_request(PromptText prompt, int attempt, const JudgeOptions& options) {
    CompletionRequest req;
    req.prompt = std::move(prompt);
    if (attempt > 0) req.prompt.text += kJudgeFormatReminder;
    req.temperature = options.temperature;
    req.max_tokens = options.max_tokens;
    req.sample_index = attempt;
    return req;
}

}  // namespace

std::string_view to_string(Verdict v) {
    return v == Verdict::Correct ? "correct" : "incorrect";
}

bool answer_is_distinctive(const Question& q) {
    const auto ref = trim_ws(q.reference_answer);
    if (ref.size() < 3) return false;
    return std::none_of(q.options.begin(), q.options.end(), [&](const OptionItem& o) { return o.label == ref; });
}

PromptText render_student_prompt(const Question& q, const PromptTemplate& student_template) {
    if (student_template.kind != TemplateKind::StudentCot) {
        throw PreconditionError("student prompts need a student_cot template");
    }
    auto prompt = render_prompt(student_template, question_bindings(q));
    const auto hint = std::string(kAnswerHintPrefix) + q.reference_answer;
    if (prompt.text.find(hint) != std::string::npos ||
        (answer_is_distinctive(q) && prompt.text.find(trim_ws(q.reference_answer)) != std::string::npos)) {
        throw PreconditionError("student prompt for " + q.id + " would reveal the reference answer");
    }
    return prompt;
}

std::optional<Verdict> parse_verdict(std::string_view raw) {
    const auto v = trim_ws(raw);
    if (v == "1") return Verdict::Correct;
    if (v == "2") return Verdict::Incorrect;
    return std::nullopt;
}

std::vector<std::vector<StudentSample>> sample_student_answers_batch(const std::vector<Question>& questions, int n,
                                                                     Gateway& gateway, const EndpointConfig& student,
                                                                     const PromptTemplate& student_template,
                                                                     const StudentOptions& options) {
    if (n < 2) {
        throw PreconditionError("n must be >= 2 to form pairs (got " + std::to_string(n) + ")");
    }
    std::vector<CompletionRequest> requests;
    requests.reserve(questions.size() * static_cast<std::size_t>(n));
    for (const auto& q : questions) {
        const auto prompt = render_student_prompt(q, student_template);
        for (int i = 0; i < n; ++i) requests.push_back(student_request(prompt, i, options));
    }
    const auto results = gateway.complete_batch(student, requests, options.parallelism);

    std::vector<std::vector<StudentSample>> out(questions.size());
    for (std::size_t qi = 0; qi < questions.size(); ++qi) {
        for (int i = 0; i < n; ++i) {
            out[qi].push_back(to_sample(questions[qi].id, i, results[qi * static_cast<std::size_t>(n) + i]));
        }
    }
    return out;
}

std::vector<StudentSample> sample_student_answers(const Question& question, int n, Gateway& gateway,
                                                  const EndpointConfig& student,
                                                  const PromptTemplate& student_template,
                                                  const StudentOptions& options) {
    return sample_student_answers_batch({question}, n, gateway, student, student_template, options).front();
}

PromptText render_judge_prompt(const Question& q, const StudentSample& sample, const PromptTemplate& judge_template,
                               JudgeInput input) {
    if (judge_template.kind != TemplateKind::Judge) {
        throw PreconditionError("judging needs a judge template");
    }
    if (!sample.parseable()) {
        throw PreconditionError("sample " + q.id + "#" + std::to_string(sample.sample_index) + " is unparseable");
    }
    auto bindings = question_bindings(q);
    auto user_question = bindings[std::string(placeholder::kUserQuestion)] +
                         bindings[std::string(placeholder::kQuestionMark)];
    Bindings judge_bindings{
        {std::string(placeholder::kUserQuestion), std::move(user_question)},
        {std::string(placeholder::kCandidateAnswer),
         input == JudgeInput::FullResponse ? serialize_tagged(*sample.response) : sample.response->answer},
    };
    return render_prompt(judge_template, judge_bindings);
}

Judgment judge_answer(const Question& question, const StudentSample& sample, Gateway& gateway,
                      const EndpointConfig& judge, const PromptTemplate& judge_template, const JudgeOptions& options) {
    const auto prompt = render_judge_prompt(question, sample, judge_template, options.input);
    const int attempts = options.mode == JudgeMode::Lenient ? 2 : 1;
    std::string raw;
    for (int attempt = 0; attempt < attempts; ++attempt) {
        try {
            raw = gateway.complete(judge, judge_request(prompt, attempt, options)).text;
        } catch (const GatewayError& e) {
            // An empty reply is a judge that said nothing, not a transport fault.
            if (e.kind() != GatewayErrorKind::EmptyResponse) throw;
            raw.clear();
        }
        if (auto v = parse_verdict(raw)) {
            return {question.id, sample.sample_index, *v, raw, judge.model_id};
        }
    }
    throw JudgeOutputUnparseable(raw);
}

std::vector<JudgeOutcome> judge_samples(const std::vector<Question>& questions,
                                        const std::vector<StudentSample>& samples, Gateway& gateway,
                                        const EndpointConfig& judge, const PromptTemplate& judge_template,
                                        const JudgeOptions& options) {
    std::map<std::string, const Question*, std::less<>> by_id;
    for (const auto& q : questions) by_id.emplace(q.id, &q);

    std::vector<JudgeOutcome> outcomes(samples.size());
    std::vector<PromptText> prompts(samples.size());
    std::vector<std::size_t> pending;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (!samples[i].parseable()) continue;
        auto it = by_id.find(samples[i].question_id);
        if (it == by_id.end()) {
            throw PreconditionError("sample refers to unknown question " + samples[i].question_id);
        }
        prompts[i] = render_judge_prompt(*it->second, samples[i], judge_template, options.input);
        pending.push_back(i);
    }

    const int attempts = options.mode == JudgeMode::Lenient ? 2 : 1;
    for (int attempt = 0; attempt < attempts && !pending.empty(); ++attempt) {
        std::vector<CompletionRequest> requests;
        for (auto i : pending) requests.push_back(judge_request(prompts[i], attempt, options));
        const auto results = gateway.complete_batch(judge, requests, options.parallelism);
        std::vector<std::size_t> retry;
        for (std::size_t k = 0; k < pending.size(); ++k) {
            const auto i = pending[k];
            auto& out = outcomes[i];
            if (!results[k].ok() && results[k].error != GatewayErrorKind::EmptyResponse) {
                out.error = results[k].error_message;
                continue;
            }
            out.raw_output = results[k].text;
            if (auto v = parse_verdict(results[k].text)) {
                out.judgment = Judgment{samples[i].question_id, samples[i].sample_index, *v, results[k].text,
                                        judge.model_id};
                out.error.clear();
            } else {
                out.error = JudgeOutputUnparseable(results[k].text).what();
                retry.push_back(i);
            }
        }
        pending = std::move(retry);
    }
    return outcomes;
}

CorErrRecord build_cor_err_record(const Question& question, const std::vector<StudentSample>& samples,
                                  const std::vector<Judgment>& judgments, const std::vector<int>& judge_failed) {
    std::map<int, const Judgment*> by_index;
    for (const auto& j : judgments) {
        if (j.question_id != question.id) continue;
        if (!by_index.emplace(j.sample_index, &j).second) {
            throw Error("duplicate judgment for " + question.id + "#" + std::to_string(j.sample_index));
        }
    }
    const std::set<int> failed(judge_failed.begin(), judge_failed.end());

    CorErrRecord rec;
    rec.question_id = question.id;
    for (const auto& s : samples) {
        if (!s.parseable() || failed.contains(s.sample_index)) {
            ++rec.excluded;
            continue;
        }
        auto it = by_index.find(s.sample_index);
        if (it == by_index.end()) {
            throw MissingJudgment(question.id, s.sample_index);
        }
        (it->second->verdict == Verdict::Correct ? rec.correct : rec.incorrect).push_back(s);
    }
    return rec;
}

std::vector<PreferencePair> make_preference_pairs(const CorErrRecord& record, PairStrategy strategy,
                                                  const std::string& prompt) {
    std::vector<PreferencePair> pairs;
    const auto& pos = record.correct;
    const auto& neg = record.incorrect;
    if (pos.empty() || neg.empty()) return pairs;

    auto emit = [&](const StudentSample& c, const StudentSample& r) {
        pairs.push_back({record.question_id, prompt, serialize_tagged(*c.response), serialize_tagged(*r.response),
                         c.sample_index, r.sample_index});
    };

    const std::size_t total = pos.size() * neg.size();
    if (strategy.kind == PairStrategyKind::CartesianAll) {
        pairs.reserve(total);
        for (const auto& c : pos) {
            for (const auto& r : neg) emit(c, r);
        }
        return pairs;
    }

    // Round r pairs chosen i with rejected (i + r) mod |A-|; rounds
    // 0..|A-|-1 cover every combination exactly once.
    const std::size_t limit = std::min(strategy.cap, total);
    for (std::size_t round = 0; pairs.size() < limit; ++round) {
        for (std::size_t i = 0; i < pos.size() && pairs.size() < limit; ++i) {
            emit(pos[i], neg[(i + round) % neg.size()]);
        }
    }
    return pairs;
}

ExportSummary export_preference_pairs(std::vector<PreferencePair> pairs, const std::filesystem::path& path) {
    std::stable_sort(pairs.begin(), pairs.end(), [](const PreferencePair& a, const PreferencePair& b) {
        return std::tie(a.question_id, a.chosen_index, a.rejected_index) <
               std::tie(b.question_id, b.chosen_index, b.rejected_index);
    });
    std::string body;
    for (const auto& p : pairs) {
        ojson j;
        j["prompt"] = p.prompt;
        j["chosen"] = p.chosen;
        j["rejected"] = p.rejected;
        body += j.dump() + "\n";
    }
    write_file_atomic(path, body);
    ExportSummary summary;
    summary.path = path;
    summary.count = pairs.size();
    summary.digest = sha256_hex(body);
    return summary;
}

std::vector<PreferencePair> import_preference_pairs(const std::filesystem::path& path) {
    std::vector<PreferencePair> out;
    std::istringstream in(read_file(path));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        PreferencePair p;
        p.prompt = j.at("prompt").get<std::string>();
        p.chosen = j.at("chosen").get<std::string>();
        p.rejected = j.at("rejected").get<std::string>();
        out.push_back(std::move(p));
    }
    return out;
}

std::string cor_err_to_jsonl(const std::vector<CorErrRecord>& records) {
    auto samples_json = [](const std::vector<StudentSample>& v) {
        ojson arr = ojson::array();
        for (const auto& s : v) {
            ojson o;
            o["sample_index"] = s.sample_index;
            o["text"] = serialize_tagged(*s.response);
            arr.push_back(std::move(o));
        }
        return arr;
    };
    std::string out;
    for (const auto& r : records) {
        ojson j;
        j["id"] = r.question_id;
        j["correct"] = samples_json(r.correct);
        j["incorrect"] = samples_json(r.incorrect);
        j["excluded"] = r.excluded;
        out += j.dump() + "\n";
    }
    return out;
}

}  // namespace medcritical
