#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tpt/shards.hpp"
#include "tpt/tokenizer.hpp"

namespace tpt {

enum class Role { system, user, assistant };

inline const char* role_name(Role r) {
    switch (r) {
        case Role::system: return "system";
        case Role::user: return "user";
        case Role::assistant: return "assistant";
    }
    return "user";
}

inline std::optional<Role> role_from_name(std::string_view s) {
    if (s == "system") return Role::system;
    if (s == "user") return Role::user;
    if (s == "assistant") return Role::assistant;
    return std::nullopt;
}

struct ChatMessage {
    Role role = Role::user;
    std::string text;
};

struct ChatExample {
    std::string example_id;
    std::vector<ChatMessage> messages;
};

/// Optional system message first, then strict user/assistant alternation
/// starting with user, and at least one assistant turn.
inline bool valid_role_structure(const ChatExample& ex, std::string* why = nullptr) {
    std::size_t i = 0;
    if (i < ex.messages.size() && ex.messages[i].role == Role::system) ++i;
    bool any_assistant = false;
    Role expect = Role::user;
    for (; i < ex.messages.size(); ++i) {
        if (ex.messages[i].role != expect) {
            if (why) *why = "roles must alternate user/assistant after an optional system message";
            return false;
        }
        if (expect == Role::assistant) any_assistant = true;
        expect = expect == Role::user ? Role::assistant : Role::user;
    }
    if (!any_assistant) {
        if (why) *why = "example has no assistant message";
        return false;
    }
    return true;
}

inline std::optional<ChatExample> chat_example_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("example_id") || !j.contains("messages")) return std::nullopt;
    if (!j.at("messages").is_array()) return std::nullopt;
    ChatExample ex;
    ex.example_id = j.at("example_id").is_string() ? j.at("example_id").get<std::string>()
                                                   : j.at("example_id").dump();
    for (const auto& m : j.at("messages")) {
        if (!m.is_object() || !m.contains("role") || !m.contains("content")) return std::nullopt;
        if (!m.at("role").is_string() || !m.at("content").is_string()) return std::nullopt;
        auto role = role_from_name(m.at("role").get<std::string>());
        if (!role) return std::nullopt;
        ex.messages.push_back({*role, m.at("content").get<std::string>()});
    }
    return ex;
}

/// Config-supplied serialization for chat examples: per-role header strings
/// plus an end-of-turn string. The base model's real template is expected to
/// be dropped in here; the built-in default is a minimal stand-in.
struct ChatTemplate {
    std::string system_header = "<|system|>\n";
    std::string user_header = "<|user|>\n";
    std::string assistant_header = "<|assistant|>\n";
    std::string end_of_turn = "<|end|>\n";
    bool mask_end_of_turn = true;  // count the assistant end-of-turn into the loss

    const std::string& header_for(Role r) const {
        switch (r) {
            case Role::system: return system_header;
            case Role::user: return user_header;
            case Role::assistant: return assistant_header;
        }
        return user_header;
    }

    nlohmann::json to_json() const {
        return {{"system_header", system_header},
                {"user_header", user_header},
                {"assistant_header", assistant_header},
                {"end_of_turn", end_of_turn},
                {"mask_end_of_turn", mask_end_of_turn}};
    }

    static ChatTemplate from_json(const nlohmann::json& j) {
        ChatTemplate t;
        t.system_header = j.value("system_header", t.system_header);
        t.user_header = j.value("user_header", t.user_header);
        t.assistant_header = j.value("assistant_header", t.assistant_header);
        t.end_of_turn = j.value("end_of_turn", t.end_of_turn);
        t.mask_end_of_turn = j.value("mask_end_of_turn", t.mask_end_of_turn);
        return t;
    }
};

struct RenderedSegment {
    enum class Kind { header, content, end_of_turn };
    Kind kind = Kind::content;
    Role role = Role::user;
    std::size_t begin = 0;  // token range within the rendered example
    std::size_t end = 0;
};

struct RenderedExample {
    std::string example_id;
    TokenSequence tokens;
    std::vector<std::uint8_t> loss_mask;  // 1 exactly on assistant content (+ its end-of-turn)
    std::vector<RenderedSegment> segments;
    bool truncated = false;

    std::uint64_t masked_in() const {
        std::uint64_t n = 0;
        for (auto b : loss_mask) n += b;
        return n;
    }
};

/// Deterministic serialization: each message is encoded segment by segment
/// (header, content, end-of-turn) so mask boundaries align exactly with token
/// boundaries. Malformed role structure yields nullopt; callers tally it.
inline std::optional<RenderedExample> render_chat(const ChatExample& ex, const ChatTemplate& tpl,
                                                  const Tokenizer& tok, std::string* why = nullptr) {
    if (!valid_role_structure(ex, why)) return std::nullopt;
    RenderedExample out;
    out.example_id = ex.example_id;
    auto append = [&](std::string_view text, RenderedSegment::Kind kind, Role role, bool in_loss) {
        if (text.empty()) return;
        TokenSequence ids = tok.encode(text);
        RenderedSegment seg;
        seg.kind = kind;
        seg.role = role;
        seg.begin = out.tokens.size();
        seg.end = seg.begin + ids.size();
        out.tokens.insert(out.tokens.end(), ids.begin(), ids.end());
        out.loss_mask.insert(out.loss_mask.end(), ids.size(), in_loss ? 1 : 0);
        out.segments.push_back(seg);
    };
    for (const auto& msg : ex.messages) {
        bool assistant = msg.role == Role::assistant;
        append(tpl.header_for(msg.role), RenderedSegment::Kind::header, msg.role, false);
        append(msg.text, RenderedSegment::Kind::content, msg.role, assistant);
        append(tpl.end_of_turn, RenderedSegment::Kind::end_of_turn, msg.role,
               assistant && tpl.mask_end_of_turn);
    }
    return out;
}

struct SFTSpan {
    std::string example_id;
    std::size_t start = 0;
    std::size_t end = 0;
    bool truncated = false;
};

struct PackedSFTSequence {
    TokenSequence tokens;
    std::vector<std::uint8_t> loss_mask;
    std::vector<std::uint32_t> segment_ids;
    std::vector<SFTSpan> spans;

    std::size_t non_pad_tokens() const {
        std::size_t n = 0;
        for (const auto& s : spans) n += s.end - s.start;
        return n;
    }
};

namespace detail {

// Drops tokens from the front of the oldest maskable content until the
// example fits: assistant content first (their early thinking tokens carry
// the least supervision value; the final answer stays), then user/system
// content as a last resort. Returns false if even that cannot fit it.
inline bool truncate_oversize(RenderedExample& ex, std::size_t seq_len) {
    if (ex.tokens.size() <= seq_len) return true;
    std::size_t to_drop = ex.tokens.size() - seq_len;
    std::vector<std::uint8_t> drop(ex.tokens.size(), 0);
    auto drop_from = [&](bool assistant_only) {
        for (auto& seg : ex.segments) {
            if (to_drop == 0) return;
            if (seg.kind != RenderedSegment::Kind::content) continue;
            bool is_assistant = seg.role == Role::assistant;
            if (assistant_only != is_assistant) continue;
            for (std::size_t t = seg.begin; t < seg.end && to_drop > 0; ++t) {
                if (!drop[t]) {
                    drop[t] = 1;
                    --to_drop;
                }
            }
        }
    };
    drop_from(true);
    drop_from(false);
    if (to_drop > 0) return false;

    RenderedExample slim;
    slim.example_id = ex.example_id;
    slim.truncated = true;
    std::vector<std::size_t> new_pos(ex.tokens.size() + 1, 0);
    for (std::size_t t = 0; t < ex.tokens.size(); ++t) {
        new_pos[t] = slim.tokens.size();
        if (drop[t]) continue;
        slim.tokens.push_back(ex.tokens[t]);
        slim.loss_mask.push_back(ex.loss_mask[t]);
    }
    new_pos[ex.tokens.size()] = slim.tokens.size();
    for (auto seg : ex.segments) {
        seg.begin = new_pos[seg.begin];
        seg.end = new_pos[seg.end];
        if (seg.begin != seg.end) slim.segments.push_back(seg);
    }
    ex = std::move(slim);
    return true;
}

}  // namespace detail

struct SFTPackStats {
    std::uint64_t examples_in = 0;
    std::uint64_t rejected = 0;
    std::uint64_t truncated = 0;
    std::uint64_t tokens_in = 0;
    std::uint64_t masked_in_tokens = 0;
    std::uint64_t sequences_out = 0;
    std::uint64_t non_pad_tokens = 0;
    std::uint64_t pad_tokens = 0;
};

/// First-fit in-order packing with hard example isolation: an example never
/// crosses a sequence boundary and never shares a segment id. Sequences are
/// emitted in creation order at finish(), which makes layout a pure function
/// of the input order. An oversize example is truncated (front of the
/// assistant thinking first) and sealed alone in its own sequence, flagged.
class SFTPacker {
  public:
    SFTPacker(std::size_t seq_len, TokenId pad_id, std::function<void(PackedSFTSequence)> emit)
        : seq_len_(seq_len), pad_id_(pad_id), emit_(std::move(emit)) {
        if (seq_len_ == 0) throw std::invalid_argument("sft-pack: seq_len must be > 0");
    }

    void add(RenderedExample ex) {
        ++stats_.examples_in;
        if (ex.tokens.size() > seq_len_) {
            if (!detail::truncate_oversize(ex, seq_len_)) {
                ++stats_.rejected;
                return;
            }
        }
        if (ex.truncated) ++stats_.truncated;
        stats_.tokens_in += ex.tokens.size();
        stats_.masked_in_tokens += ex.masked_in();

        Bin* target = nullptr;
        if (!ex.truncated) {
            for (auto& bin : bins_) {
                if (!bin.sealed && bin.seq.tokens.size() + ex.tokens.size() <= seq_len_) {
                    target = &bin;
                    break;
                }
            }
        }
        if (!target) {
            bins_.emplace_back();
            target = &bins_.back();
        }
        SFTSpan span;
        span.example_id = ex.example_id;
        span.start = target->seq.tokens.size();
        span.end = span.start + ex.tokens.size();
        span.truncated = ex.truncated;
        std::uint32_t seg = static_cast<std::uint32_t>(target->seq.spans.size() + 1);
        target->seq.tokens.insert(target->seq.tokens.end(), ex.tokens.begin(), ex.tokens.end());
        target->seq.loss_mask.insert(target->seq.loss_mask.end(), ex.loss_mask.begin(), ex.loss_mask.end());
        target->seq.segment_ids.insert(target->seq.segment_ids.end(), ex.tokens.size(), seg);
        target->seq.spans.push_back(std::move(span));
        if (ex.truncated) target->sealed = true;  // oversize examples live alone
    }

    void finish() {
        for (auto& bin : bins_) {
            std::size_t pad = seq_len_ - bin.seq.tokens.size();
            bin.seq.tokens.insert(bin.seq.tokens.end(), pad, pad_id_);
            bin.seq.loss_mask.insert(bin.seq.loss_mask.end(), pad, 0);
            bin.seq.segment_ids.insert(bin.seq.segment_ids.end(), pad, 0);
            stats_.pad_tokens += pad;
            stats_.non_pad_tokens += bin.seq.non_pad_tokens();
            stats_.sequences_out += 1;
            emit_(std::move(bin.seq));
        }
        bins_.clear();
    }

    const SFTPackStats& stats() const { return stats_; }

  private:
    struct Bin {
        PackedSFTSequence seq;
        bool sealed = false;
    };

    std::size_t seq_len_;
    TokenId pad_id_;
    std::function<void(PackedSFTSequence)> emit_;
    std::vector<Bin> bins_;
    SFTPackStats stats_;
};

inline void write_sft_sequence(ShardWriter& writer, const PackedSFTSequence& seq) {
    nlohmann::json spans = nlohmann::json::array();
    for (const auto& s : seq.spans) {
        spans.push_back({{"example_id", s.example_id},
                         {"start", s.start},
                         {"end", s.end},
                         {"truncated", s.truncated}});
    }
    writer.add_raw(seq.tokens, spans, &seq.loss_mask, seq.non_pad_tokens());
}

}  // namespace tpt
