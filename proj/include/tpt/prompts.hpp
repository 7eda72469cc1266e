#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tpt/corpus.hpp"
#include "tpt/tokenizer.hpp"
#include "tpt/util.hpp"

namespace tpt {

enum class TemplateId { default_prompt, random_focus };

inline const char* template_name(TemplateId t) {
    return t == TemplateId::default_prompt ? "default" : "random_focus";
}

inline TemplateId template_from_name(std::string_view name) {
    if (name == "default") return TemplateId::default_prompt;
    if (name == "random_focus") return TemplateId::random_focus;
    throw std::invalid_argument("unknown prompt template: " + std::string(name));
}

inline constexpr std::string_view kDefaultPromptBody =
    "{{CONTEXT}}\n"
    "## End of the context\n"
    "\n"
    "Simulate an expert's in-depth thought process as they analyze the above context, "
    "focusing on complex and informative aspects. Skip trivial details. Use Feynman "
    "technique whenever possible to ensure a deep understanding.";

inline constexpr std::string_view kFocusMarker = "<<<READING HERE>>>";

inline constexpr std::string_view kRandomFocusPromptBody =
    "{{RANDOM CONTEXT PREFIX}}\n"
    "<<<READING HERE>>>\n"
    "{{REMAINING CONTEXT}}\n"
    "## End of the context\n"
    "\n"
    "An expert is focused at the <<<READING HERE>>> position. Simulate the expert's "
    "in-depth thought process as they analyze the above context, focusing on complex "
    "and informative aspects. Skip trivial details. Use Feynman technique whenever "
    "possible to ensure a deep understanding.";

struct PromptTemplate {
    TemplateId id = TemplateId::default_prompt;
    std::string body;

    static PromptTemplate get(TemplateId id) {
        PromptTemplate t;
        t.id = id;
        t.body = std::string(id == TemplateId::default_prompt ? kDefaultPromptBody : kRandomFocusPromptBody);
        return t;
    }
};

namespace detail {

inline std::string replace_placeholder(std::string_view body, std::string_view placeholder,
                                       std::string_view value) {
    auto pos = body.find(placeholder);
    if (pos == std::string_view::npos) {
        throw std::invalid_argument("prompt body lacks placeholder " + std::string(placeholder));
    }
    std::string out;
    out.reserve(body.size() + value.size());
    out.append(body.substr(0, pos));
    out.append(value);
    out.append(body.substr(pos + placeholder.size()));
    return out;
}

}  // namespace detail

/// Candidate focus positions: starts of whitespace-delimited words strictly
/// inside the text, so a split never lands mid-word.
inline std::vector<std::size_t> focus_candidates(std::string_view text) {
    std::vector<std::size_t> out;
    for (std::size_t i = 1; i < text.size(); ++i) {
        if (is_ascii_space(text[i - 1]) && !is_ascii_space(text[i])) out.push_back(i);
    }
    return out;
}

/// Seed-derived split position, uniform over focus_candidates. Fixed
/// (doc_id, seed) always reproduces the same position.
inline std::size_t focus_split_point(std::string_view text, std::string_view doc_id, std::uint64_t seed) {
    auto candidates = focus_candidates(text);
    if (candidates.empty()) return text.size() / 2;
    SplitMix64 mix(seed);
    SplitMix64 rng(mix.next() ^ hash_seed(doc_id));
    return candidates[rng.next_below(candidates.size())];
}

inline std::string render_prompt_text(std::string_view context, std::string_view doc_id,
                                      const PromptTemplate& tpl, std::uint64_t seed) {
    if (tpl.id == TemplateId::default_prompt) {
        return detail::replace_placeholder(tpl.body, "{{CONTEXT}}", context);
    }
    std::size_t split = focus_split_point(context, doc_id, seed);
    std::string out = detail::replace_placeholder(tpl.body, "{{RANDOM CONTEXT PREFIX}}", context.substr(0, split));
    return detail::replace_placeholder(out, "{{REMAINING CONTEXT}}", context.substr(split));
}

/// Renders the generation prompt for a document: cap the text to the
/// generator-slot token budget, then substitute into the template.
inline std::string render_prompt(const Document& doc, const PromptTemplate& tpl, std::uint64_t seed,
                                 const Tokenizer& generator, std::size_t max_input_tokens = 2048) {
    std::string context = generation_view(doc, generator, max_input_tokens);
    return render_prompt_text(context, doc.doc_id, tpl, seed);
}

}  // namespace tpt
