#include "medcritical/evaluator.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <regex>
#include <set>
#include <sstream>

#include "medcritical/digest.hpp"

namespace medcritical {

using nlohmann::json;

namespace {

bool is_space(unsigned char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r';
}

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && is_space(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && is_space(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

bool has_label(const std::vector<OptionItem>& options, std::string_view label) {
    return std::any_of(options.begin(), options.end(), [&](const OptionItem& o) { return o.label == label; });
}

// Strips trailing ASCII punctuation and the full-width period 。
std::string strip_trailing_punct(std::string s) {
    for (;;) {
        if (!s.empty() && (s.back() == '.' || s.back() == '!' || s.back() == ';' || s.back() == ',')) {
            s.pop_back();
        } else if (s.size() >= 3 && s.compare(s.size() - 3, 3, "\xE3\x80\x82") == 0) {
            s.resize(s.size() - 3);
        } else {
            break;
        }
        while (!s.empty() && is_space(static_cast<unsigned char>(s.back()))) s.pop_back();
    }
    return s;
}

std::optional<std::string> rule_label_token(const std::string& answer, const std::vector<OptionItem>& options) {
    // Whole answer is a (possibly decorated) label.
    static const std::regex whole(R"(^\(?([A-Za-z0-9]{1,2})\)?[.:)]?$)");
    // Label at the start followed by punctuation, e.g. "B. Because..." or "(C) ...".
    static const std::regex leading(R"(^(?:\(([A-Za-z0-9]{1,2})\)|([A-Za-z0-9]{1,2})[.:)])(?:\s|$))");
    std::smatch m;
    if (std::regex_match(answer, m, whole) && has_label(options, m[1].str())) {
        return m[1].str();
    }
    if (std::regex_search(answer, m, leading)) {
        const auto label = m[1].matched ? m[1].str() : m[2].str();
        if (has_label(options, label)) return label;
    }
    return std::nullopt;
}

std::optional<std::string> rule_answer_is(const std::string& answer, const std::vector<OptionItem>& options) {
    static const std::regex english("answer\\s+is\\s*(?::|\xEF\xBC\x9A)?\\s*\\(?([A-Za-z0-9]{1,2})\\)?(?![A-Za-z0-9])",
                                    std::regex::icase);
    static const std::regex chinese("\xE7\xAD\x94\xE6\xA1\x88(?:\xE6\x98\xAF|\xE4\xB8\xBA)\\s*(?::|\xEF\xBC\x9A)?\\s*"
                                    "\\(?([A-Za-z0-9]{1,2})\\)?(?![A-Za-z0-9])");
    std::set<std::string> found;
    for (const auto* re : {&english, &chinese}) {
        for (auto it = std::sregex_iterator(answer.begin(), answer.end(), *re); it != std::sregex_iterator(); ++it) {
            const auto label = (*it)[1].str();
            if (has_label(options, label)) found.insert(label);
        }
    }
    if (found.size() == 1) return *found.begin();
    return std::nullopt;
}

std::optional<std::string> rule_option_text(const std::string& answer, const std::vector<OptionItem>& options) {
    const auto target = lower(strip_trailing_punct(answer));
    std::optional<std::string> hit;
    for (const auto& opt : options) {
        if (lower(strip_trailing_punct(trim(opt.text))) == target) {
            if (hit) return std::nullopt;
            hit = opt.label;
        }
    }
    return hit;
}

std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

}  // namespace

std::optional<std::string> extract_choice(std::string_view answer_view, const std::vector<OptionItem>& options) {
    if (options.empty()) return std::nullopt;
    const auto answer = trim(answer_view);
    if (answer.empty()) return std::nullopt;
    if (auto r = rule_label_token(answer, options)) return r;
    if (auto r = rule_answer_is(answer, options)) return r;
    return rule_option_text(answer, options);
}

double percent_2dp(std::int64_t correct, std::int64_t total) {
    if (total <= 0) return 0.0;
    // hundredths of a percent, half-up: floor((2*c*10000 + t) / (2t))
    const std::int64_t hundredths = (2 * correct * 10000 + total) / (2 * total);
    return static_cast<double>(hundredths) / 100.0;
}

double round_2dp(double value) {
    return std::floor(value * 100.0 + 0.5 + 1e-9) / 100.0;
}

double combine_split_accuracies(const std::vector<std::pair<std::int64_t, double>>& sizes_and_accuracies) {
    double weighted = 0.0;
    std::int64_t n = 0;
    for (const auto& [size, acc] : sizes_and_accuracies) {
        weighted += static_cast<double>(size) * acc;
        n += size;
    }
    return n > 0 ? weighted / static_cast<double>(n) : 0.0;
}

Prediction make_prediction(const Question& q, std::string_view raw_text) {
    Prediction p;
    p.question_id = q.id;
    p.response = try_parse_tagged_response(raw_text);
    if (p.response) {
        p.extracted_choice = extract_choice(p.response->answer, q.options);
    }
    return p;
}

AccuracyReport score(const std::vector<Prediction>& predictions, const std::vector<Question>& questions,
                     std::string model_name, std::string base_model) {
    std::map<std::string, const Question*, std::less<>> by_id;
    for (const auto& q : questions) by_id.emplace(q.id, &q);

    AccuracyReport report;
    report.model_name = std::move(model_name);
    report.base_model = std::move(base_model);
    for (const auto& p : predictions) {
        auto it = by_id.find(p.question_id);
        if (it == by_id.end()) throw UnknownQuestionId(p.question_id);
        const Question& q = *it->second;
        auto& split = report.per_split[q.split];
        ++split.total;
        if (p.extracted_choice && *p.extracted_choice == q.reference_answer) ++split.correct;
        if (q.split == Split::Train) report.train_split_evaluated = true;
    }
    for (auto& [split, s] : report.per_split) {
        s.accuracy = percent_2dp(s.correct, s.total);
        report.overall.correct += s.correct;
        report.overall.total += s.total;
    }
    report.overall.accuracy = percent_2dp(report.overall.correct, report.overall.total);
    return report;
}

std::string render_report(const std::vector<AccuracyReport>& reports) {
    using Row = std::array<std::string, 5>;
    std::vector<Row> rows{{"ModelName", "BaseModel", "Train", "Test", "Total"}};
    for (const auto& r : reports) {
        auto split_cell = [&](Split s) {
            auto it = r.per_split.find(s);
            return it == r.per_split.end() ? std::string("-") : fmt2(it->second.accuracy);
        };
        rows.push_back({r.model_name, r.base_model, split_cell(Split::Train), split_cell(Split::Test),
                        fmt2(r.overall.accuracy)});
    }
    std::array<std::size_t, 5> width{};
    for (const auto& row : rows) {
        for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
    }
    // Names left-aligned, percentages right-aligned, two-space gutters.
    std::ostringstream out;
    for (const auto& row : rows) {
        std::string line;
        for (std::size_t c = 0; c < row.size(); ++c) {
            const std::string fill(width[c] - row[c].size(), ' ');
            if (c > 0) line += "  ";
            line += c < 2 ? row[c] + fill : fill + row[c];
        }
        while (!line.empty() && line.back() == ' ') line.pop_back();
        out << line << "\n";
    }
    for (const auto& r : reports) {
        if (r.train_split_evaluated) {
            out << "note: " << r.model_name << " was scored on train-split items; its Train column is not held out\n";
        }
    }
    return out.str();
}

std::string report_to_json(const AccuracyReport& report) {
    auto split_json = [](const SplitScore& s) {
        return nlohmann::ordered_json{{"correct", s.correct}, {"total", s.total}, {"accuracy", s.accuracy}};
    };
    nlohmann::ordered_json j;
    j["model_name"] = report.model_name;
    j["base_model"] = report.base_model;
    j["per_split"] = nlohmann::ordered_json::object();
    for (const auto& [split, s] : report.per_split) {
        j["per_split"][std::string(to_string(split))] = split_json(s);
    }
    j["overall"] = split_json(report.overall);
    j["train_split_evaluated"] = report.train_split_evaluated;
    return j.dump(2) + "\n";
}

std::vector<std::pair<std::string, std::string>> read_predictions_file(const std::filesystem::path& path) {
    std::vector<std::pair<std::string, std::string>> out;
    std::istringstream in(read_file(path));
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        json row = json::parse(line, nullptr, false);
        if (row.is_discarded() || !row.contains("id") || !row.contains("raw_text")) {
            throw IoError(path.string() + ":" + std::to_string(line_no) + ": expected {\"id\", \"raw_text\"}");
        }
        out.emplace_back(row["id"].get<std::string>(), row["raw_text"].get<std::string>());
    }
    return out;
}

}  // namespace medcritical
