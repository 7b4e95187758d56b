#include "medcritical/tagged_response.hpp"

#include <array>

namespace medcritical {

namespace {

bool is_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

bool all_space(std::string_view s) {
    for (char c : s) {
        if (!is_space(c)) return false;
    }
    return true;
}

std::size_t count_of(std::string_view hay, std::string_view needle) {
    std::size_t n = 0;
    for (auto pos = hay.find(needle); pos != std::string_view::npos; pos = hay.find(needle, pos + needle.size())) {
        ++n;
    }
    return n;
}

}  // namespace

TaggedResponse parse_tagged_response(std::string_view text) {
    const std::array<std::string_view, 4> tags{kThinkOpen, kThinkClose, kAnswerOpen, kAnswerClose};
    for (auto tag : tags) {
        const auto n = count_of(text, tag);
        if (n == 0) {
            throw TagError(TagErrorKind::MalformedTags, "missing " + std::string(tag));
        }
        if (n > 1) {
            throw TagError(TagErrorKind::MultipleBlocks, "more than one " + std::string(tag));
        }
    }

    const auto think_open = text.find(kThinkOpen);
    const auto think_close = text.find(kThinkClose);
    const auto answer_open = text.find(kAnswerOpen);
    const auto answer_close = text.find(kAnswerClose);
    if (!(think_open < think_close && think_close < answer_open && answer_open < answer_close)) {
        throw TagError(TagErrorKind::MalformedTags, "order");
    }

    if (!all_space(text.substr(0, think_open))) {
        throw TagError(TagErrorKind::MalformedTags, "text before <think>");
    }
    const auto think_end = think_close + kThinkClose.size();
    if (!all_space(text.substr(think_end, answer_open - think_end))) {
        throw TagError(TagErrorKind::MalformedTags, "text between </think> and <answer>");
    }
    if (!all_space(text.substr(answer_close + kAnswerClose.size()))) {
        throw TagError(TagErrorKind::MalformedTags, "text after </answer>");
    }

    TaggedResponse out;
    out.raw = std::string(text);
    const auto think_begin = think_open + kThinkOpen.size();
    out.think = std::string(text.substr(think_begin, think_close - think_begin));
    const auto answer_begin = answer_open + kAnswerOpen.size();
    out.answer = std::string(text.substr(answer_begin, answer_close - answer_begin));
    return out;
}

std::optional<TaggedResponse> try_parse_tagged_response(std::string_view text, std::string* why) {
    try {
        return parse_tagged_response(text);
    } catch (const TagError& e) {
        if (why) *why = e.what();
        return std::nullopt;
    }
}

std::string serialize_tagged(std::string_view think, std::string_view answer) {
    std::string out;
    out.reserve(think.size() + answer.size() + 40);
    out.append(kThinkOpen).append(think).append(kThinkClose).push_back('\n');
    out.append(kAnswerOpen).append(answer).append(kAnswerClose);
    return out;
}

}  // namespace medcritical
