#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "medcritical/error.hpp"

namespace medcritical {

enum class TemplateKind { TeacherCot, StudentCot, Judge };

std::string_view to_string(TemplateKind kind);
TemplateKind template_kind_from_string(std::string_view name);

// Placeholder names used by the bundled templates.
namespace placeholder {
inline constexpr std::string_view kUserQuestion = "user_question";
inline constexpr std::string_view kQuestionMark = "question_mark";
inline constexpr std::string_view kReferenceAnswer = "reference_answer";
inline constexpr std::string_view kCandidateAnswer = "candidate_answer";
}  // namespace placeholder

// The sentence that carries the reference answer inside the teacher prompt.
inline constexpr std::string_view kAnswerHintPrefix = "This question's answer is: ";

struct PromptTemplate {
    TemplateKind kind = TemplateKind::TeacherCot;
    std::string body;
};

using Bindings = std::map<std::string, std::string, std::less<>>;

struct PromptText {
    std::string text;
    TemplateKind source_template = TemplateKind::TeacherCot;
    Bindings bindings;
};

struct ValidationReport {
    bool valid = true;
    std::vector<std::string> missing;
    std::vector<std::string> duplicated;
    // Placeholders that must not appear for this kind (e.g. the reference
    // answer in a student prompt) or that no kind knows about.
    std::vector<std::string> forbidden;
};

class MissingBinding : public Error {
public:
    explicit MissingBinding(std::string name)
        : Error("missing binding for placeholder {" + name + "}"), name_(std::move(name)) {}
    const std::string& name() const noexcept { return name_; }

private:
    std::string name_;
};

class TemplateInvalid : public ConfigError {
public:
    using ConfigError::ConfigError;
};

// Placeholder names a template of this kind must contain.
std::vector<std::string> required_placeholders(TemplateKind kind);

// Names of every `{identifier}` marker in body, in order of appearance
// (repeats included).
std::vector<std::string> scan_placeholders(std::string_view body);

ValidationReport validate_template(const PromptTemplate& tmpl);

// Pure substitution. Throws TemplateInvalid if the template fails validation,
// MissingBinding if a placeholder in the body is unbound. Bindings for names
// not present in the body are ignored.
PromptText render_prompt(const PromptTemplate& tmpl, const Bindings& bindings);

// "?" unless the text already ends in an ASCII or full-width question mark.
std::string question_mark_for(std::string_view question_text);

// Bundled defaults. The CoT bodies follow the long chain-of-thought template
// box verbatim; the student body drops the reference-answer line.
const PromptTemplate& default_template(TemplateKind kind);

class TemplateSet {
public:
    TemplateSet();  // bundled defaults

    // Manifest: one `kind = relative/path.txt` per line, `#` comments.
    // Kinds not listed keep their bundled default. Every loaded template is
    // validated.
    static TemplateSet load_manifest(const std::filesystem::path& manifest);

    const PromptTemplate& get(TemplateKind kind) const;
    void set(PromptTemplate tmpl);

private:
    std::map<TemplateKind, PromptTemplate> templates_;
};

}  // namespace medcritical
