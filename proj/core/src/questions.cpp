#include "medcritical/questions.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "medcritical/digest.hpp"

namespace medcritical {

using nlohmann::json;

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

// Checks the Question invariants; empty string when valid.
std::string check_question(const Question& q) {
    if (q.id.empty()) return "empty id";
    if (trim(q.text).empty()) return "empty question text";
    if (q.reference_answer.empty()) return "empty answer";
    if (!q.options.empty()) {
        std::set<std::string> labels;
        for (const auto& opt : q.options) {
            if (opt.label.empty()) return "empty option label";
            if (!labels.insert(opt.label).second) return "duplicate option label '" + opt.label + "'";
        }
        if (!labels.contains(q.reference_answer)) {
            return "answer '" + q.reference_answer + "' is not an option label";
        }
    }
    return {};
}

Question question_from_json(const json& row) {
    Question q;
    q.id = row.at("id").get<std::string>();
    q.text = row.at("text").get<std::string>();
    q.reference_answer = trim(row.at("answer").get<std::string>());
    q.split = split_from_string(row.at("split").get<std::string>());
    if (auto it = row.find("options"); it != row.end() && !it->is_null()) {
        if (it->is_array()) {
            for (const auto& pair : *it) {
                if (!pair.is_array() || pair.size() != 2) {
                    throw std::invalid_argument("options entries must be [label, text]");
                }
                q.options.push_back({trim(pair[0].get<std::string>()), pair[1].get<std::string>()});
            }
        } else if (it->is_object()) {
            for (const auto& [label, text] : it->items()) {
                q.options.push_back({trim(label), text.get<std::string>()});
            }
        } else {
            throw std::invalid_argument("options must be an array or object");
        }
    }
    return q;
}

void add_or_reject(LoadResult& out, std::set<std::string>& seen, Question q, std::size_t line) {
    if (auto why = check_question(q); !why.empty()) {
        out.rejects.push_back({line, q.id, why});
        return;
    }
    if (!seen.insert(q.id).second) {
        out.rejects.push_back({line, q.id, "duplicate id"});
        return;
    }
    out.questions.push_back(std::move(q));
}

LoadResult load_jsonl(std::string_view data) {
    LoadResult out;
    std::set<std::string> seen;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= data.size()) {
        auto nl = data.find('\n', pos);
        if (nl == std::string_view::npos) nl = data.size();
        const auto line = trim(data.substr(pos, nl - pos));
        ++line_no;
        pos = nl + 1;
        if (line.empty()) continue;
        json row = json::parse(line, nullptr, false);
        if (row.is_discarded() || !row.is_object()) {
            out.rejects.push_back({line_no, "", "not a JSON object"});
            continue;
        }
        try {
            add_or_reject(out, seen, question_from_json(row), line_no);
        } catch (const std::exception& e) {
            std::string id = row.contains("id") && row["id"].is_string() ? row["id"].get<std::string>() : "";
            out.rejects.push_back({line_no, id, std::string("schema: ") + e.what()});
        }
    }
    return out;
}

LoadResult load_csv(std::string_view data) {
    auto records = parse_csv(data);
    if (records.empty()) {
        throw SchemaError("CSV file has no header row");
    }
    const auto& header = records.front().second;
    std::map<std::string, std::size_t> col;
    std::vector<std::pair<std::string, std::size_t>> option_cols;
    for (std::size_t i = 0; i < header.size(); ++i) {
        const auto name = trim(header[i]);
        if (name.rfind("option_", 0) == 0 && name.size() > 7) {
            option_cols.emplace_back(name.substr(7), i);
        } else {
            col[lower(name)] = i;
        }
    }
    std::string missing;
    for (const char* req : {"id", "text", "answer", "split"}) {
        if (!col.contains(req)) missing += std::string(missing.empty() ? "" : ", ") + req;
    }
    if (!missing.empty()) {
        throw SchemaError("CSV header lacks required column(s): " + missing);
    }

    LoadResult out;
    std::set<std::string> seen;
    for (std::size_t r = 1; r < records.size(); ++r) {
        const auto& [line, fields] = records[r];
        if (fields.size() == 1 && trim(fields[0]).empty()) continue;
        if (fields.size() != header.size()) {
            out.rejects.push_back({line, fields.empty() ? "" : fields[0],
                                   "expected " + std::to_string(header.size()) + " fields, got " +
                                       std::to_string(fields.size())});
            continue;
        }
        try {
            Question q;
            q.id = trim(fields[col["id"]]);
            q.text = fields[col["text"]];
            q.reference_answer = trim(fields[col["answer"]]);
            q.split = split_from_string(fields[col["split"]]);
            for (const auto& [label, idx] : option_cols) {
                if (!trim(fields[idx]).empty()) q.options.push_back({label, fields[idx]});
            }
            add_or_reject(out, seen, std::move(q), line);
        } catch (const std::exception& e) {
            out.rejects.push_back({line, trim(fields[col["id"]]), std::string("schema: ") + e.what()});
        }
    }
    return out;
}

}  // namespace

std::string_view to_string(Split split) {
    return split == Split::Train ? "train" : "test";
}

Split split_from_string(std::string_view s) {
    const auto v = lower(trim(s));
    if (v == "train") return Split::Train;
    if (v == "test") return Split::Test;
    throw std::invalid_argument("unknown split '" + std::string(s) + "'");
}

std::size_t LoadResult::train_count() const {
    return static_cast<std::size_t>(
        std::count_if(questions.begin(), questions.end(), [](const Question& q) { return q.split == Split::Train; }));
}

std::size_t LoadResult::test_count() const {
    return questions.size() - train_count();
}

QuestionFormat question_format_from_string(std::string_view s) {
    const auto v = lower(s);
    if (v == "jsonl") return QuestionFormat::Jsonl;
    if (v == "csv") return QuestionFormat::Csv;
    throw ConfigError("unknown question format '" + std::string(s) + "'");
}

std::vector<std::pair<std::size_t, std::vector<std::string>>> parse_csv(std::string_view data) {
    std::vector<std::pair<std::size_t, std::vector<std::string>>> records;
    std::vector<std::string> fields;
    std::string field;
    bool in_quotes = false;
    bool record_open = false;
    std::size_t line = 1;
    std::size_t record_line = 1;

    auto end_record = [&] {
        fields.push_back(std::move(field));
        field.clear();
        records.emplace_back(record_line, std::move(fields));
        fields.clear();
        record_open = false;
    };

    for (std::size_t i = 0; i < data.size(); ++i) {
        const char c = data[i];
        if (!record_open) {
            record_open = true;
            record_line = line;
        }
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < data.size() && data[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                if (c == '\n') ++line;
                field.push_back(c);
            }
            continue;
        }
        if (c == '"' && field.empty()) {
            in_quotes = true;
        } else if (c == ',') {
            fields.push_back(std::move(field));
            field.clear();
        } else if (c == '\n') {
            if (!field.empty() && field.back() == '\r') field.pop_back();
            end_record();
            ++line;
        } else {
            field.push_back(c);
        }
    }
    if (record_open) {
        if (!field.empty() && field.back() == '\r') field.pop_back();
        end_record();
    }
    return records;
}

LoadResult load_questions(const std::filesystem::path& path, QuestionFormat format) {
    std::string data;
    try {
        data = read_file(path);
    } catch (const IoError& e) {
        throw FileUnreadable(e.what());
    }
    auto out = format == QuestionFormat::Jsonl ? load_jsonl(data) : load_csv(data);
    std::clog << "load_questions: " << path.string() << ": " << out.questions.size() << " loaded ("
              << out.train_count() << " train, " << out.test_count() << " test), " << out.rejects.size()
              << " rejected\n";
    return out;
}

void require_no_rejects(const LoadResult& result) {
    if (result.rejects.empty()) return;
    std::ostringstream msg;
    msg << result.rejects.size() << " malformed row(s):";
    for (const auto& r : result.rejects) {
        msg << "\n  line " << r.line;
        if (!r.id.empty()) msg << " (id " << r.id << ")";
        msg << ": " << r.reason;
    }
    throw SchemaError(msg.str());
}

Bindings question_bindings(const Question& q) {
    Bindings b;
    if (!q.is_multiple_choice()) {
        b[std::string(placeholder::kUserQuestion)] = q.text;
        b[std::string(placeholder::kQuestionMark)] = question_mark_for(q.text);
        return b;
    }
    std::string text = q.text + question_mark_for(q.text);
    for (const auto& opt : q.options) {
        text += "\n" + opt.label + ". " + opt.text;
    }
    b[std::string(placeholder::kUserQuestion)] = std::move(text);
    b[std::string(placeholder::kQuestionMark)] = "";
    return b;
}

}  // namespace medcritical
