#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "medcritical/error.hpp"

namespace medcritical {

inline constexpr std::string_view kThinkOpen = "<think>";
inline constexpr std::string_view kThinkClose = "</think>";
inline constexpr std::string_view kAnswerOpen = "<answer>";
inline constexpr std::string_view kAnswerClose = "</answer>";

// A model output of the form <think>...</think><answer>...</answer>.
// think/answer hold the verbatim inner contents.
struct TaggedResponse {
    std::string raw;
    std::string think;
    std::string answer;

    bool operator==(const TaggedResponse&) const = default;
};

enum class TagErrorKind { MalformedTags, MultipleBlocks };

class TagError : public Error {
public:
    TagError(TagErrorKind kind, std::string reason)
        : Error(std::string(kind == TagErrorKind::MalformedTags ? "MalformedTags" : "MultipleBlocks") +
                ": " + reason),
          kind_(kind),
          reason_(std::move(reason)) {}

    TagErrorKind kind() const noexcept { return kind_; }
    const std::string& reason() const noexcept { return reason_; }

private:
    TagErrorKind kind_;
    std::string reason_;
};

// Whitespace outside the two blocks and between them is ignored; any other
// text outside the blocks, a missing or repeated tag, or a wrong order is
// rejected. Throws TagError.
TaggedResponse parse_tagged_response(std::string_view text);

// Non-throwing variant: nullopt on any TagError, with the message in *why.
std::optional<TaggedResponse> try_parse_tagged_response(std::string_view text,
                                                        std::string* why = nullptr);

// "<think>" + think + "</think>\n<answer>" + answer + "</answer>"
std::string serialize_tagged(std::string_view think, std::string_view answer);
inline std::string serialize_tagged(const TaggedResponse& r) {
    return serialize_tagged(r.think, r.answer);
}

}  // namespace medcritical
