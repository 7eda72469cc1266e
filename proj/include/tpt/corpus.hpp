#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"
#include "tpt/tokenizer.hpp"
#include "tpt/util.hpp"

namespace tpt {

enum class ReasoningIntensity { none, basic, intermediate, advanced };

inline const char* intensity_name(ReasoningIntensity r) {
    switch (r) {
        case ReasoningIntensity::none: return "none";
        case ReasoningIntensity::basic: return "basic";
        case ReasoningIntensity::intermediate: return "intermediate";
        case ReasoningIntensity::advanced: return "advanced";
    }
    return "none";
}

/// Absent tags are absent, never empty strings.
struct MetadataTags {
    std::optional<std::string> domain;
    std::optional<ReasoningIntensity> reasoning_intensity;
    std::optional<std::string> target_audience;
};

struct Document {
    std::string doc_id;     // source_id + ":" + hex(sha256(rtrim(text)))
    std::string source_id;
    std::string text;
    MetadataTags meta;
    std::uint64_t token_count = 0;  // under the trainee tokenizer, at ingest time
};

inline std::string derive_doc_id(std::string_view source_id, std::string_view text) {
    return std::string(source_id) + ":" + sha256_hex(rtrim(text));
}

// Source datasets label reasoning intensity with their own vocabulary; the
// table maps those labels (lowercased) onto the four-level enum.
inline std::unordered_map<std::string, ReasoningIntensity> default_intensity_labels() {
    return {
        {"none", ReasoningIntensity::none},
        {"no reasoning", ReasoningIntensity::none},
        {"basic", ReasoningIntensity::basic},
        {"basic reasoning", ReasoningIntensity::basic},
        {"intermediate", ReasoningIntensity::intermediate},
        {"intermediate reasoning", ReasoningIntensity::intermediate},
        {"advanced", ReasoningIntensity::advanced},
        {"advanced reasoning", ReasoningIntensity::advanced},
    };
}

inline std::string lowercase(std::string_view s) {
    std::string out(s);
    for (char& c : out) {
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
    return out;
}

struct IngestStats {
    std::uint64_t records_read = 0;
    std::uint64_t documents = 0;
    std::uint64_t malformed_skipped = 0;
    std::uint64_t unknown_intensity_labels = 0;
};

struct IngestOptions {
    std::string source_id;
    std::unordered_map<std::string, ReasoningIntensity> intensity_labels = default_intensity_labels();
};

nlohmann::json document_to_json(const Document& doc);

/// Streams documents out of a line-delimited record file in file order.
/// Malformed lines are skipped and tallied, never fatal; an unreadable file is.
class DocumentReader {
  public:
    DocumentReader(const std::filesystem::path& path, const Tokenizer& trainee, IngestOptions opts)
        : in_(path), trainee_(trainee), opts_(std::move(opts)) {
        if (!in_) throw std::runtime_error("cannot open corpus file: " + path.string());
    }

    std::optional<Document> next() {
        std::string line;
        while (std::getline(in_, line)) {
            ++stats_.records_read;
            auto doc = parse_line(line);
            if (doc) {
                ++stats_.documents;
                return doc;
            }
            ++stats_.malformed_skipped;
        }
        return std::nullopt;
    }

    const IngestStats& stats() const { return stats_; }

  private:
    std::optional<Document> parse_line(const std::string& line) {
        nlohmann::json j = nlohmann::json::parse(line, nullptr, /*allow_exceptions=*/false);
        if (j.is_discarded() || !j.is_object()) return std::nullopt;
        if (!j.contains("text") || !j.at("text").is_string()) return std::nullopt;
        Document doc;
        doc.text = j.at("text").get<std::string>();
        if (doc.text.empty()) return std::nullopt;
        doc.source_id = opts_.source_id;
        if (doc.source_id.empty() && j.contains("source") && j.at("source").is_string()) {
            doc.source_id = j.at("source").get<std::string>();
        }
        doc.doc_id = derive_doc_id(doc.source_id, doc.text);
        doc.token_count = trainee_.token_count(doc.text);
        if (j.contains("meta") && j.at("meta").is_object()) {
            const auto& m = j.at("meta");
            if (m.contains("domain") && m.at("domain").is_string()) {
                auto v = m.at("domain").get<std::string>();
                if (!v.empty()) doc.meta.domain = v;
            }
            if (m.contains("target_audience") && m.at("target_audience").is_string()) {
                auto v = m.at("target_audience").get<std::string>();
                if (!v.empty()) doc.meta.target_audience = v;
            }
            if (m.contains("reasoning_intensity") && m.at("reasoning_intensity").is_string()) {
                auto v = m.at("reasoning_intensity").get<std::string>();
                if (!v.empty()) {
                    auto it = opts_.intensity_labels.find(lowercase(v));
                    if (it != opts_.intensity_labels.end()) {
                        doc.meta.reasoning_intensity = it->second;
                    } else {
                        ++stats_.unknown_intensity_labels;
                    }
                }
            }
        }
        return doc;
    }

    std::ifstream in_;
    const Tokenizer& trainee_;
    IngestOptions opts_;
    IngestStats stats_;
};

inline nlohmann::json document_to_json(const Document& doc) {
    nlohmann::json j;
    j["id"] = doc.doc_id;
    j["source"] = doc.source_id;
    j["text"] = doc.text;
    j["token_count"] = doc.token_count;
    nlohmann::json meta = nlohmann::json::object();
    if (doc.meta.domain) meta["domain"] = *doc.meta.domain;
    if (doc.meta.reasoning_intensity) meta["reasoning_intensity"] = intensity_name(*doc.meta.reasoning_intensity);
    if (doc.meta.target_audience) meta["target_audience"] = *doc.meta.target_audience;
    if (!meta.empty()) j["meta"] = meta;
    return j;
}

/// Exact document-level dedup: first occurrence wins, survivor order is input
/// order. Key is sha256 of the text with trailing whitespace trimmed. The
/// seen-set is single-consumer; fan out only after this stage.
class ExactDeduper {
  public:
    bool first_occurrence(std::string_view text) {
        bool inserted = seen_.insert(sha256(rtrim(text))).second;
        if (inserted) {
            ++kept_;
        } else {
            ++dropped_;
        }
        return inserted;
    }

    std::uint64_t kept() const { return kept_; }
    std::uint64_t dropped() const { return dropped_; }

  private:
    std::unordered_set<Digest, DigestHash> seen_;
    std::uint64_t kept_ = 0;
    std::uint64_t dropped_ = 0;
};

inline std::vector<Document> filter_duplicates(const std::vector<Document>& docs) {
    ExactDeduper dedup;
    std::vector<Document> out;
    out.reserve(docs.size());
    for (const auto& d : docs) {
        if (dedup.first_occurrence(d.text)) out.push_back(d);
    }
    return out;
}

/// The document text as handed to the thinking generator: capped to
/// `max_tokens` under the generator tokenizer slot.
inline std::string generation_view(const Document& doc, const Tokenizer& generator,
                                   std::size_t max_tokens = 2048) {
    return generator.truncate_to(doc.text, max_tokens);
}

}  // namespace tpt
