#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "tpt/util.hpp"

namespace tpt {

using TokenId = std::uint32_t;
using TokenSequence = std::vector<TokenId>;

/// The five structural tokens every pipeline run needs. Ids must be pairwise
/// distinct and must sit outside the base vocabulary range.
struct SpecialTokens {
    TokenId pad = 0;
    TokenId begin_document = 0;
    TokenId begin_thinking = 0;
    TokenId end_thinking = 0;
    TokenId end_document = 0;

    static SpecialTokens dense_after(TokenId base) {
        return SpecialTokens{base, base + 1, base + 2, base + 3, base + 4};
    }

    std::vector<std::pair<std::string, TokenId>> items() const {
        return {{"pad", pad},
                {"begin_document", begin_document},
                {"begin_thinking", begin_thinking},
                {"end_thinking", end_thinking},
                {"end_document", end_document}};
    }

    bool contains(TokenId id) const {
        return id == pad || id == begin_document || id == begin_thinking || id == end_thinking ||
               id == end_document;
    }
};

struct TokenizerSpec {
    enum class Kind { byte_fallback, external_vocab };

    Kind kind = Kind::byte_fallback;
    std::string vocab_path;                        // external_vocab only
    std::string merges_path;                       // optional, external_vocab only
    std::optional<SpecialTokens> special_tokens;   // default: dense block right after the base vocab

    static const char* kind_name(Kind k) {
        return k == Kind::byte_fallback ? "byte-level-fallback" : "external-vocab";
    }

    static Kind kind_from_name(std::string_view name) {
        if (name == "byte-level-fallback") return Kind::byte_fallback;
        if (name == "external-vocab") return Kind::external_vocab;
        throw std::invalid_argument("unknown tokenizer kind: " + std::string(name));
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["kind"] = kind_name(kind);
        if (!vocab_path.empty()) j["vocab_path"] = vocab_path;
        if (!merges_path.empty()) j["merges_path"] = merges_path;
        if (special_tokens) {
            nlohmann::json s;
            for (const auto& [name, id] : special_tokens->items()) s[name] = id;
            j["special_tokens"] = s;
        }
        return j;
    }

    static TokenizerSpec from_json(const nlohmann::json& j) {
        TokenizerSpec spec;
        spec.kind = kind_from_name(j.at("kind").get<std::string>());
        spec.vocab_path = j.value("vocab_path", "");
        spec.merges_path = j.value("merges_path", "");
        if (j.contains("special_tokens")) {
            const auto& s = j.at("special_tokens");
            SpecialTokens st;
            st.pad = s.at("pad").get<TokenId>();
            st.begin_document = s.at("begin_document").get<TokenId>();
            st.begin_thinking = s.at("begin_thinking").get<TokenId>();
            st.end_thinking = s.at("end_thinking").get<TokenId>();
            st.end_document = s.at("end_document").get<TokenId>();
            spec.special_tokens = st;
        }
        return spec;
    }
};

namespace detail {

// Vocab files escape token bytes so the format stays line-oriented:
// \t \n \r \\ plus \xHH for arbitrary bytes.
inline std::string unescape_token(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        char c = s[i];
        if (c != '\\') {
            out.push_back(c);
            continue;
        }
        if (i + 1 >= s.size()) throw std::invalid_argument("dangling escape in token string");
        char e = s[++i];
        switch (e) {
            case 't': out.push_back('\t'); break;
            case 'n': out.push_back('\n'); break;
            case 'r': out.push_back('\r'); break;
            case '\\': out.push_back('\\'); break;
            case 'x': {
                if (i + 2 >= s.size()) throw std::invalid_argument("truncated \\x escape");
                auto hex = [](char h) -> int {
                    if (h >= '0' && h <= '9') return h - '0';
                    if (h >= 'a' && h <= 'f') return h - 'a' + 10;
                    if (h >= 'A' && h <= 'F') return h - 'A' + 10;
                    throw std::invalid_argument("bad hex digit in \\x escape");
                };
                int v = hex(s[i + 1]) * 16 + hex(s[i + 2]);
                i += 2;
                out.push_back(static_cast<char>(v));
                break;
            }
            default: throw std::invalid_argument("unknown escape in token string");
        }
    }
    return out;
}

inline std::string escape_token(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        unsigned char u = static_cast<unsigned char>(c);
        if (c == '\\') {
            out += "\\\\";
        } else if (c == '\t') {
            out += "\\t";
        } else if (c == '\n') {
            out += "\\n";
        } else if (c == '\r') {
            out += "\\r";
        } else if (u < 0x21 || u > 0x7E) {
            char buf[8];
            std::snprintf(buf, sizeof(buf), "\\x%02x", u);
            out += buf;
        } else {
            out.push_back(c);
        }
    }
    return out;
}

}  // namespace detail

/// Text <-> token conversion. Immutable after load; safe for any number of
/// concurrent readers.
///
/// Two kinds:
///   byte-level-fallback  one token per byte, ids 0..255. The default; makes
///                        every downstream token count exactly checkable.
///   external-vocab       vocab file of `<token-escaped>\t<id>` lines, plus an
///                        optional merges file (`<left>\t<right>` per line).
///                        Bytes no token covers pass through a reserved
///                        byte-fallback block right after the vocab, so dirty
///                        input never fails to encode.
class Tokenizer {
  public:
    static Tokenizer load(const TokenizerSpec& spec) {
        Tokenizer t;
        t.spec_ = spec;
        if (spec.kind == TokenizerSpec::Kind::byte_fallback) {
            t.vocab_limit_ = 0;
            t.base_size_ = 256;
        } else {
            t.load_vocab(spec.vocab_path);
            if (!spec.merges_path.empty()) t.load_merges(spec.merges_path);
            t.base_size_ = t.vocab_limit_ + 256;  // trailing byte-fallback block
        }
        t.specials_ = spec.special_tokens.value_or(SpecialTokens::dense_after(t.base_size_));
        t.validate_specials();
        t.compute_spec_hash();
        return t;
    }

    TokenSequence encode(std::string_view text) const {
        TokenSequence ids;
        if (spec_.kind == TokenizerSpec::Kind::byte_fallback) {
            ids.reserve(text.size());
            for (char c : text) ids.push_back(static_cast<TokenId>(static_cast<unsigned char>(c)));
            return ids;
        }
        ids.reserve(text.size() / 3 + 4);
        // Pieces are split at ASCII whitespace runs; whitespace bytes are safe
        // split points even inside multi-byte UTF-8.
        std::size_t i = 0;
        while (i < text.size()) {
            std::size_t j = i;
            bool ws = is_ascii_space(text[i]);
            while (j < text.size() && is_ascii_space(text[j]) == ws) ++j;
            encode_piece(text.substr(i, j - i), ids);
            i = j;
        }
        return ids;
    }

    std::size_t token_count(std::string_view text) const { return encode(text).size(); }

    /// Inverse of encode. Special tokens render as the empty string; an id
    /// that is neither in the vocabulary nor special is a hard error naming
    /// the offending sequence index.
    std::string decode(const TokenSequence& ids) const {
        std::string out;
        out.reserve(ids.size());
        for (std::size_t i = 0; i < ids.size(); ++i) {
            TokenId id = ids[i];
            if (specials_.contains(id)) continue;
            if (spec_.kind == TokenizerSpec::Kind::byte_fallback) {
                if (id >= 256) throw_bad_id(id, i);
                out.push_back(static_cast<char>(id));
                continue;
            }
            if (id < vocab_limit_) {
                auto it = id_to_token_.find(id);
                if (it == id_to_token_.end()) throw_bad_id(id, i);
                out += it->second;
            } else if (id < base_size_) {
                out.push_back(static_cast<char>(id - vocab_limit_));
            } else {
                throw_bad_id(id, i);
            }
        }
        return out;
    }

    void validate_ids(const TokenSequence& ids) const {
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] >= base_size_ && !specials_.contains(ids[i])) throw_bad_id(ids[i], i);
        }
    }

    /// Longest prefix of `text` that encodes to at most `max_tokens` tokens.
    /// Cuts exactly at token boundaries so the result re-encodes cleanly.
    std::string truncate_to(std::string_view text, std::size_t max_tokens) const {
        if (max_tokens == 0) throw std::invalid_argument("truncate_to: max_tokens must be > 0");
        if (spec_.kind == TokenizerSpec::Kind::byte_fallback) {
            return std::string(text.substr(0, std::min(text.size(), max_tokens)));
        }
        if (token_count(text) <= max_tokens) return std::string(text);
        // Token counts are not monotone in prefix length once merges exist
        // (a longer prefix can enable a merge that absorbs earlier tokens),
        // so scan down from the longest prefix that could possibly fit.
        std::size_t upper = std::min(text.size(), max_tokens * std::max<std::size_t>(max_token_len_, 1));
        for (std::size_t p = upper;; --p) {
            if (token_count(text.substr(0, p)) <= max_tokens) return std::string(text.substr(0, p));
            if (p == 0) return std::string();
        }
    }

    TokenId base_size() const { return base_size_; }
    const SpecialTokens& specials() const { return specials_; }
    bool is_special(TokenId id) const { return specials_.contains(id); }
    const TokenizerSpec& spec() const { return spec_; }

    /// Hash over kind, vocab/merges file contents (not paths), and special
    /// token assignments. Recorded in manifests so shards pin their tokenizer.
    const std::string& spec_hash() const { return spec_hash_; }

  private:
    Tokenizer() = default;

    [[noreturn]] void throw_bad_id(TokenId id, std::size_t index) const {
        std::ostringstream oss;
        oss << "token id " << id << " at index " << index << " is out of range for this tokenizer";
        throw std::out_of_range(oss.str());
    }

    void load_vocab(const std::string& path) {
        if (path.empty()) throw std::invalid_argument("external-vocab tokenizer requires vocab_path");
        std::string contents = read_file(path);
        vocab_file_hash_ = sha256_hex(contents);
        std::istringstream in(contents);
        std::string line;
        std::size_t line_no = 0;
        TokenId max_id = 0;
        bool any = false;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            auto tab = line.find('\t');
            if (tab == std::string::npos) {
                throw std::invalid_argument("vocab line " + std::to_string(line_no) + ": missing tab separator");
            }
            std::string token = detail::unescape_token(std::string_view(line).substr(0, tab));
            TokenId id = 0;
            auto id_str = std::string_view(line).substr(tab + 1);
            auto [ptr, ec] = std::from_chars(id_str.data(), id_str.data() + id_str.size(), id);
            if (ec != std::errc() || ptr != id_str.data() + id_str.size()) {
                throw std::invalid_argument("vocab line " + std::to_string(line_no) + ": bad id");
            }
            if (token.empty()) {
                throw std::invalid_argument("vocab line " + std::to_string(line_no) + ": empty token");
            }
            if (!token_to_id_.emplace(token, id).second) {
                throw std::invalid_argument("vocab line " + std::to_string(line_no) + ": duplicate token");
            }
            id_to_token_.emplace(id, token);
            max_id = std::max(max_id, id);
            max_token_len_ = std::max(max_token_len_, token.size());
            any = true;
        }
        if (!any) throw std::invalid_argument("vocab file is empty: " + path);
        if (id_to_token_.size() != token_to_id_.size()) {
            throw std::invalid_argument("vocab file assigns one id to multiple tokens: " + path);
        }
        vocab_limit_ = max_id + 1;
    }

    void load_merges(const std::string& path) {
        std::string contents = read_file(path);
        merges_file_hash_ = sha256_hex(contents);
        std::istringstream in(contents);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            auto tab = line.find('\t');
            if (tab == std::string::npos) {
                throw std::invalid_argument("merges line " + std::to_string(line_no) + ": missing tab separator");
            }
            std::string left = detail::unescape_token(std::string_view(line).substr(0, tab));
            std::string right = detail::unescape_token(std::string_view(line).substr(tab + 1));
            auto key = std::make_pair(std::move(left), std::move(right));
            if (merge_ranks_.find(key) == merge_ranks_.end()) {
                merge_ranks_.emplace(std::move(key), static_cast<std::uint32_t>(merge_ranks_.size()));
            }
        }
    }

    void validate_specials() const {
        std::vector<TokenId> ids;
        for (const auto& [name, id] : specials_.items()) {
            if (id < base_size_) {
                throw std::invalid_argument("special token '" + name + "' id " + std::to_string(id) +
                                            " lies inside the base vocabulary range [0, " +
                                            std::to_string(base_size_) + ")");
            }
            ids.push_back(id);
        }
        std::sort(ids.begin(), ids.end());
        if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
            throw std::invalid_argument("special token ids must be pairwise distinct");
        }
    }

    void compute_spec_hash() {
        nlohmann::json j;
        j["kind"] = TokenizerSpec::kind_name(spec_.kind);
        if (!vocab_file_hash_.empty()) j["vocab_sha256"] = vocab_file_hash_;
        if (!merges_file_hash_.empty()) j["merges_sha256"] = merges_file_hash_;
        nlohmann::json s;
        for (const auto& [name, id] : specials_.items()) s[name] = id;
        j["special_tokens"] = s;
        spec_hash_ = sha256_hex(j.dump());
    }

    void emit_symbol(std::string_view sym, TokenSequence& ids) const {
        auto it = token_to_id_.find(std::string(sym));
        if (it != token_to_id_.end()) {
            ids.push_back(it->second);
            return;
        }
        for (char c : sym) {
            ids.push_back(vocab_limit_ + static_cast<TokenId>(static_cast<unsigned char>(c)));
        }
    }

    void encode_piece(std::string_view piece, TokenSequence& ids) const {
        if (piece.empty()) return;
        if (!merge_ranks_.empty()) {
            encode_piece_bpe(piece, ids);
            return;
        }
        // Greedy longest match; unmatched bytes go to the fallback block.
        std::size_t pos = 0;
        while (pos < piece.size()) {
            std::size_t best = 0;
            TokenId best_id = 0;
            std::size_t limit = std::min(max_token_len_, piece.size() - pos);
            for (std::size_t len = limit; len >= 1; --len) {
                auto it = token_to_id_.find(std::string(piece.substr(pos, len)));
                if (it != token_to_id_.end()) {
                    best = len;
                    best_id = it->second;
                    break;
                }
            }
            if (best > 0) {
                ids.push_back(best_id);
                pos += best;
            } else {
                ids.push_back(vocab_limit_ + static_cast<TokenId>(static_cast<unsigned char>(piece[pos])));
                pos += 1;
            }
        }
    }

    void encode_piece_bpe(std::string_view piece, TokenSequence& ids) const {
        std::vector<std::string> symbols;
        symbols.reserve(piece.size());
        for (char c : piece) symbols.emplace_back(1, c);
        while (symbols.size() >= 2) {
            std::uint32_t best_rank = UINT32_MAX;
            std::size_t best_pos = symbols.size();
            for (std::size_t p = 0; p + 1 < symbols.size(); ++p) {
                auto it = merge_ranks_.find({symbols[p], symbols[p + 1]});
                if (it != merge_ranks_.end() && it->second < best_rank) {
                    best_rank = it->second;
                    best_pos = p;
                }
            }
            if (best_pos == symbols.size()) break;
            symbols[best_pos] += symbols[best_pos + 1];
            symbols.erase(symbols.begin() + static_cast<std::ptrdiff_t>(best_pos) + 1);
        }
        for (const auto& sym : symbols) emit_symbol(sym, ids);
    }

    TokenizerSpec spec_;
    TokenId vocab_limit_ = 0;  // ids [0, vocab_limit_) come from the vocab file
    TokenId base_size_ = 0;    // vocab_limit_ + 256 byte-fallback ids (or 256 for byte kind)
    SpecialTokens specials_;
    std::unordered_map<std::string, TokenId> token_to_id_;
    std::unordered_map<TokenId, std::string> id_to_token_;
    std::map<std::pair<std::string, std::string>, std::uint32_t> merge_ranks_;
    std::size_t max_token_len_ = 1;
    std::string vocab_file_hash_;
    std::string merges_file_hash_;
    std::string spec_hash_;
};

}  // namespace tpt
