#include "medcritical/templates.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "medcritical/digest.hpp"

namespace medcritical {

namespace bundled {
extern const std::string_view kTeacherCot;
extern const std::string_view kStudentCot;
extern const std::string_view kJudge;
}  // namespace bundled

namespace {

bool is_ident_start(char c) {
    return std::isalpha(static_cast<unsigned char>(c)) || c == '_';
}

bool is_ident_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

// Calls on_text(segment) for literal text and on_marker(name) for each
// `{identifier}` marker. Braces that do not enclose an identifier are text.
template <typename OnText, typename OnMarker>
void walk_markers(std::string_view body, OnText on_text, OnMarker on_marker) {
    std::size_t literal_start = 0;
    std::size_t i = 0;
    while (i < body.size()) {
        if (body[i] == '{' && i + 1 < body.size() && is_ident_start(body[i + 1])) {
            std::size_t j = i + 1;
            while (j < body.size() && is_ident_char(body[j])) {
                ++j;
            }
            if (j < body.size() && body[j] == '}') {
                on_text(body.substr(literal_start, i - literal_start));
                on_marker(body.substr(i + 1, j - i - 1));
                i = j + 1;
                literal_start = i;
                continue;
            }
        }
        ++i;
    }
    on_text(body.substr(literal_start));
}

struct PlaceholderRule {
    std::string_view name;
    int min_count;
    int max_count;  // -1 = unbounded
};

std::vector<PlaceholderRule> rules_for(TemplateKind kind) {
    using namespace placeholder;
    switch (kind) {
        case TemplateKind::TeacherCot:
            return {{kUserQuestion, 1, -1}, {kQuestionMark, 1, -1}, {kReferenceAnswer, 1, 1}};
        case TemplateKind::StudentCot:
            return {{kUserQuestion, 1, -1}, {kQuestionMark, 1, -1}, {kReferenceAnswer, 0, 0}};
        case TemplateKind::Judge:
            return {{kUserQuestion, 1, 1}, {kCandidateAnswer, 1, 1}};
    }
    return {};
}

}  // namespace

std::string_view to_string(TemplateKind kind) {
    switch (kind) {
        case TemplateKind::TeacherCot: return "teacher_cot";
        case TemplateKind::StudentCot: return "student_cot";
        case TemplateKind::Judge: return "judge";
    }
    return "unknown";
}

TemplateKind template_kind_from_string(std::string_view name) {
    if (name == "teacher_cot") return TemplateKind::TeacherCot;
    if (name == "student_cot") return TemplateKind::StudentCot;
    if (name == "judge") return TemplateKind::Judge;
    throw ConfigError("unknown template kind '" + std::string(name) + "'");
}

std::vector<std::string> required_placeholders(TemplateKind kind) {
    std::vector<std::string> out;
    for (const auto& rule : rules_for(kind)) {
        if (rule.min_count > 0) {
            out.emplace_back(rule.name);
        }
    }
    return out;
}

std::vector<std::string> scan_placeholders(std::string_view body) {
    std::vector<std::string> names;
    walk_markers(
        body, [](std::string_view) {}, [&](std::string_view name) { names.emplace_back(name); });
    return names;
}

ValidationReport validate_template(const PromptTemplate& tmpl) {
    std::map<std::string, int, std::less<>> counts;
    for (auto& name : scan_placeholders(tmpl.body)) {
        ++counts[name];
    }

    ValidationReport report;
    const auto rules = rules_for(tmpl.kind);
    for (const auto& rule : rules) {
        auto it = counts.find(rule.name);
        const int n = it == counts.end() ? 0 : it->second;
        if (rule.max_count == 0) {
            if (n > 0) report.forbidden.emplace_back(rule.name);
        } else if (n < rule.min_count) {
            report.missing.emplace_back(rule.name);
        } else if (rule.max_count > 0 && n > rule.max_count) {
            report.duplicated.emplace_back(rule.name);
        }
    }
    for (const auto& [name, n] : counts) {
        const bool known = std::any_of(rules.begin(), rules.end(),
                                       [&](const PlaceholderRule& r) { return r.name == name; });
        if (!known) report.forbidden.push_back(name);
    }
    report.valid = report.missing.empty() && report.duplicated.empty() && report.forbidden.empty();
    return report;
}

PromptText render_prompt(const PromptTemplate& tmpl, const Bindings& bindings) {
    const auto report = validate_template(tmpl);
    if (!report.valid) {
        std::ostringstream msg;
        msg << "template " << to_string(tmpl.kind) << " invalid:";
        for (auto& m : report.missing) msg << " missing{" << m << "}";
        for (auto& d : report.duplicated) msg << " duplicated{" << d << "}";
        for (auto& f : report.forbidden) msg << " forbidden{" << f << "}";
        throw TemplateInvalid(msg.str());
    }

    PromptText out;
    out.source_template = tmpl.kind;
    out.text.reserve(tmpl.body.size());
    walk_markers(
        tmpl.body, [&](std::string_view text) { out.text.append(text); },
        [&](std::string_view name) {
            auto it = bindings.find(name);
            if (it == bindings.end()) {
                throw MissingBinding(std::string(name));
            }
            out.text.append(it->second);
            out.bindings.insert(*it);
        });
    return out;
}

std::string question_mark_for(std::string_view question_text) {
    auto end = question_text.find_last_not_of(" \t\r\n");
    if (end == std::string_view::npos) {
        return "?";
    }
    auto trimmed = question_text.substr(0, end + 1);
    static constexpr std::string_view kFullWidth = "\xEF\xBC\x9F";  // U+FF1F
    if (trimmed.back() == '?' || trimmed.ends_with(kFullWidth)) {
        return "";
    }
    return "?";
}

const PromptTemplate& default_template(TemplateKind kind) {
    static const PromptTemplate teacher{TemplateKind::TeacherCot, std::string(bundled::kTeacherCot)};
    static const PromptTemplate student{TemplateKind::StudentCot, std::string(bundled::kStudentCot)};
    static const PromptTemplate judge{TemplateKind::Judge, std::string(bundled::kJudge)};
    switch (kind) {
        case TemplateKind::TeacherCot: return teacher;
        case TemplateKind::StudentCot: return student;
        case TemplateKind::Judge: return judge;
    }
    return teacher;
}

TemplateSet::TemplateSet() {
    for (auto kind : {TemplateKind::TeacherCot, TemplateKind::StudentCot, TemplateKind::Judge}) {
        templates_[kind] = default_template(kind);
    }
}

TemplateSet TemplateSet::load_manifest(const std::filesystem::path& manifest) {
    TemplateSet set;
    std::istringstream in(read_file(manifest));
    std::string line;
    int lineno = 0;
    auto trim = [](std::string s) {
        auto b = s.find_first_not_of(" \t\r");
        auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line.front() == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(manifest.string() + ":" + std::to_string(lineno) + ": expected 'kind = path'");
        }
        const auto kind = template_kind_from_string(trim(line.substr(0, eq)));
        std::filesystem::path file = trim(line.substr(eq + 1));
        if (file.is_relative()) {
            file = manifest.parent_path() / file;
        }
        PromptTemplate tmpl{kind, read_file(file)};
        const auto report = validate_template(tmpl);
        if (!report.valid) {
            std::string msg = file.string() + ": invalid " + std::string(to_string(kind)) + " template:";
            for (auto& m : report.missing) msg += " missing{" + m + "}";
            for (auto& d : report.duplicated) msg += " duplicated{" + d + "}";
            for (auto& f : report.forbidden) msg += " forbidden{" + f + "}";
            throw TemplateInvalid(msg);
        }
        set.set(std::move(tmpl));
    }
    return set;
}

const PromptTemplate& TemplateSet::get(TemplateKind kind) const {
    return templates_.at(kind);
}

void TemplateSet::set(PromptTemplate tmpl) {
    auto kind = tmpl.kind;
    templates_[kind] = std::move(tmpl);
}

}  // namespace medcritical
