#include "medcritical/sft_builder.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <ctime>
#include <sstream>

#include "medcritical/digest.hpp"
#include "medcritical/evaluator.hpp"

namespace medcritical {

using ojson = nlohmann::ordered_json;

namespace {

std::string now_iso8601() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Lowercase, collapse whitespace runs, strip surrounding space and trailing
// ASCII punctuation.
std::string normalize_free_text(std::string_view s) {
    std::string out;
    bool pending_space = false;
    for (unsigned char c : s) {
        if (std::isspace(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    while (!out.empty() && std::ispunct(static_cast<unsigned char>(out.back()))) out.pop_back();
    return out;
}

std::string jsonl_line(const ojson& j) {
    return j.dump() + "\n";
}

}  // namespace

std::string_view to_string(SftRejectReason reason) {
    switch (reason) {
        case SftRejectReason::MalformedTags: return "MalformedTags";
        case SftRejectReason::MultipleBlocks: return "MultipleBlocks";
        case SftRejectReason::AnswerMismatch: return "AnswerMismatch";
        case SftRejectReason::TemplateEcho: return "TemplateEcho";
        case SftRejectReason::GatewayFailure: return "GatewayFailure";
    }
    return "Unknown";
}

void RejectReport::add(SftReject reject) {
    std::lock_guard lock(mu_);
    rejects_.push_back(std::move(reject));
}

std::vector<SftReject> RejectReport::sorted() const {
    std::lock_guard lock(mu_);
    auto out = rejects_;
    std::stable_sort(out.begin(), out.end(),
                     [](const SftReject& a, const SftReject& b) { return a.question_id < b.question_id; });
    return out;
}

std::size_t RejectReport::size() const {
    std::lock_guard lock(mu_);
    return rejects_.size();
}

bool answer_consistent(const Question& q, const TaggedResponse& chain, FreeTextMatch mode) {
    if (q.is_multiple_choice()) {
        const auto choice = extract_choice(chain.answer, q.options);
        return choice && *choice == q.reference_answer;
    }
    const auto answer = normalize_free_text(chain.answer);
    const auto reference = normalize_free_text(q.reference_answer);
    if (reference.empty()) return false;
    return mode == FreeTextMatch::Exact ? answer == reference : answer.find(reference) != std::string::npos;
}

SftBuildResult build_sft_dataset(const std::vector<Question>& questions, Gateway& gateway,
                                 const EndpointConfig& teacher, const PromptTemplate& teacher_template,
                                 const SftOptions& options) {
    if (teacher_template.kind != TemplateKind::TeacherCot) {
        throw ConfigError("build_sft_dataset needs a teacher_cot template");
    }
    if (questions.empty()) {
        throw ConfigError("build_sft_dataset: no questions");
    }
    if (options.parse_retries < 0) {
        throw ConfigError("parse_retries must be >= 0");
    }
    teacher.validate();

    std::vector<PromptText> prompts;
    prompts.reserve(questions.size());
    for (const auto& q : questions) {
        auto bindings = question_bindings(q);
        bindings[std::string(placeholder::kReferenceAnswer)] = q.reference_answer;
        prompts.push_back(render_prompt(teacher_template, bindings));
    }

    std::vector<std::optional<TaggedResponse>> parsed(questions.size());
    std::vector<std::string> last_failure(questions.size());
    std::vector<bool> tag_failure_multiple(questions.size(), false);
    std::vector<bool> gateway_failed(questions.size(), false);

    std::vector<std::size_t> pending(questions.size());
    for (std::size_t i = 0; i < pending.size(); ++i) pending[i] = i;

    for (int attempt = 0; attempt <= options.parse_retries && !pending.empty(); ++attempt) {
        std::vector<CompletionRequest> requests;
        requests.reserve(pending.size());
        for (auto i : pending) {
            CompletionRequest req;
            req.prompt = prompts[i];
            if (attempt > 0) req.prompt.text += kFormatReminder;
            req.temperature = options.temperature;
            req.max_tokens = options.max_tokens;
            req.sample_index = attempt;
            requests.push_back(std::move(req));
        }
        auto results = gateway.complete_batch(teacher, requests, options.parallelism);

        std::vector<std::size_t> still_pending;
        for (std::size_t k = 0; k < pending.size(); ++k) {
            const auto i = pending[k];
            const auto& res = results[k];
            if (!res.ok()) {
                gateway_failed[i] = true;
                last_failure[i] = res.error_message;
                continue;  // gateway errors are not format problems; no re-ask
            }
            try {
                parsed[i] = parse_tagged_response(res.text);
            } catch (const TagError& e) {
                last_failure[i] = e.what();
                tag_failure_multiple[i] = e.kind() == TagErrorKind::MultipleBlocks;
                still_pending.push_back(i);
            }
        }
        pending = std::move(still_pending);
    }

    RejectReport rejects;
    SftBuildResult out;
    const auto created = now_iso8601();
    for (std::size_t i = 0; i < questions.size(); ++i) {
        const auto& q = questions[i];
        if (gateway_failed[i]) {
            rejects.add({q.id, SftRejectReason::GatewayFailure, last_failure[i]});
            continue;
        }
        if (!parsed[i]) {
            rejects.add({q.id, tag_failure_multiple[i] ? SftRejectReason::MultipleBlocks : SftRejectReason::MalformedTags,
                         last_failure[i]});
            continue;
        }
        const auto& chain = *parsed[i];
        const auto echo = std::string(kAnswerHintPrefix).substr(0, kAnswerHintPrefix.size() - 2);
        if (chain.think.find(echo) != std::string::npos || chain.answer.find(echo) != std::string::npos) {
            rejects.add({q.id, SftRejectReason::TemplateEcho, "chain repeats the answer-hint sentence"});
            continue;
        }
        if (!answer_consistent(q, chain, options.free_text_match)) {
            rejects.add({q.id, SftRejectReason::AnswerMismatch,
                         "reference '" + q.reference_answer + "' not named by the chain's answer"});
            continue;
        }
        out.records.push_back({q, chain, teacher.model_id, created});
    }
    out.rejects = rejects.sorted();
    return out;
}

std::string ExportSummary::to_json() const {
    ojson j;
    j["path"] = path.string();
    j["count"] = count;
    j["digest"] = digest;
    if (!sidecar_path.empty()) {
        j["sidecar_path"] = sidecar_path.string();
        j["sidecar_digest"] = sidecar_digest;
    }
    return j.dump();
}

ExportSummary export_sft_records(const std::vector<SftRecord>& records, const std::filesystem::path& path,
                                 const std::filesystem::path& sidecar_path, const PromptTemplate& student_template) {
    if (records.empty()) {
        throw ConfigError("export_sft_records: no records");
    }
    if (student_template.kind != TemplateKind::StudentCot) {
        throw ConfigError("export_sft_records needs a student_cot template");
    }
    std::string trainer;
    std::string sidecar;
    for (const auto& r : records) {
        const auto prompt = render_prompt(student_template, question_bindings(r.question));
        ojson line;
        line["prompt"] = prompt.text;
        line["completion"] = serialize_tagged(r.chain);
        trainer += jsonl_line(line);

        ojson side;
        side["id"] = r.question.id;
        side["question"] = r.question.text;
        side["options"] = ojson::array();
        for (const auto& opt : r.question.options) side["options"].push_back({opt.label, opt.text});
        side["answer"] = r.question.reference_answer;
        side["split"] = std::string(to_string(r.question.split));
        side["think"] = r.chain.think;
        side["answer_text"] = r.chain.answer;
        side["teacher_model"] = r.teacher_model;
        sidecar += jsonl_line(side);
    }
    write_file_atomic(path, trainer);
    write_file_atomic(sidecar_path, sidecar);
    return {path, records.size(), sha256_hex(trainer), sidecar_path, sha256_hex(sidecar)};
}

std::vector<SftRecord> import_sft_sidecar(const std::filesystem::path& sidecar_path) {
    std::vector<SftRecord> out;
    std::istringstream in(read_file(sidecar_path));
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            auto j = nlohmann::json::parse(line);
            SftRecord r;
            r.question.id = j.at("id").get<std::string>();
            r.question.text = j.at("question").get<std::string>();
            for (const auto& opt : j.at("options")) {
                r.question.options.push_back({opt.at(0).get<std::string>(), opt.at(1).get<std::string>()});
            }
            r.question.reference_answer = j.at("answer").get<std::string>();
            r.question.split = split_from_string(j.at("split").get<std::string>());
            r.chain.think = j.at("think").get<std::string>();
            r.chain.answer = j.at("answer_text").get<std::string>();
            r.chain.raw = serialize_tagged(r.chain);
            r.teacher_model = j.at("teacher_model").get<std::string>();
            out.push_back(std::move(r));
        } catch (const std::exception& e) {
            throw IoError(sidecar_path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

std::string rejects_to_jsonl(const std::vector<SftReject>& rejects) {
    std::string out;
    for (const auto& r : rejects) {
        ojson j;
        j["id"] = r.question_id;
        j["reason"] = std::string(to_string(r.reason));
        j["detail"] = r.detail;
        out += jsonl_line(j);
    }
    return out;
}

}  // namespace medcritical
