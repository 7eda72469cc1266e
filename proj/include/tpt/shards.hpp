#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tpt/assemble.hpp"
#include "tpt/util.hpp"

namespace tpt {

// Shard layout, all little endian and fully determined by (config, seed):
//   shard_%06d.bin   token ids as u32, seq_len per sequence, concatenated
//   shard_%06d.mask  one byte per token (loss mask plane, SFT shards only)
//   shard_%06d.idx   one JSON line per sequence: byte offset, length, spans
//   manifest.json    config/tokenizer hashes, seed, shard list with sha256
//                    content hashes, and token totals

struct ShardEntry {
    std::string file;
    std::string sha256;
    std::string mask_sha256;  // empty unless the shard carries a mask plane
    std::uint64_t sequences = 0;
    std::uint64_t non_pad_tokens = 0;
};

struct Manifest {
    std::uint32_t format_version = 1;
    std::string config_hash;
    std::string tokenizer_hash;
    std::uint64_t seed = 0;
    std::uint64_t seq_len = 0;
    std::uint64_t shard_size = 0;  // sequences per shard
    bool has_mask_plane = false;
    std::vector<ShardEntry> shards;
    std::uint64_t total_sequences = 0;
    std::uint64_t total_non_pad_tokens = 0;
    std::uint64_t total_pad_tokens = 0;
    std::uint64_t total_samples = 0;
    std::uint64_t masked_in_tokens = 0;  // SFT shards only
    std::map<std::string, std::uint64_t> samples_per_source;
    std::map<std::string, std::uint64_t> tokens_per_source;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["format_version"] = format_version;
        j["config_hash"] = config_hash;
        j["tokenizer_hash"] = tokenizer_hash;
        j["seed"] = seed;
        j["seq_len"] = seq_len;
        j["shard_size"] = shard_size;
        j["has_mask_plane"] = has_mask_plane;
        j["shards"] = nlohmann::json::array();
        for (const auto& s : shards) {
            nlohmann::json e;
            e["file"] = s.file;
            e["sha256"] = s.sha256;
            if (!s.mask_sha256.empty()) e["mask_sha256"] = s.mask_sha256;
            e["sequences"] = s.sequences;
            e["non_pad_tokens"] = s.non_pad_tokens;
            j["shards"].push_back(e);
        }
        j["totals"]["sequences"] = total_sequences;
        j["totals"]["non_pad_tokens"] = total_non_pad_tokens;
        j["totals"]["pad_tokens"] = total_pad_tokens;
        j["totals"]["samples"] = total_samples;
        if (has_mask_plane) j["totals"]["masked_in_tokens"] = masked_in_tokens;
        j["per_source"]["samples"] = samples_per_source;
        j["per_source"]["tokens"] = tokens_per_source;
        return j;
    }

    static Manifest from_json(const nlohmann::json& j) {
        Manifest m;
        m.format_version = j.at("format_version").get<std::uint32_t>();
        m.config_hash = j.value("config_hash", "");
        m.tokenizer_hash = j.value("tokenizer_hash", "");
        m.seed = j.value("seed", std::uint64_t{0});
        m.seq_len = j.at("seq_len").get<std::uint64_t>();
        m.shard_size = j.at("shard_size").get<std::uint64_t>();
        m.has_mask_plane = j.value("has_mask_plane", false);
        for (const auto& e : j.at("shards")) {
            ShardEntry s;
            s.file = e.at("file").get<std::string>();
            s.sha256 = e.at("sha256").get<std::string>();
            s.mask_sha256 = e.value("mask_sha256", "");
            s.sequences = e.at("sequences").get<std::uint64_t>();
            s.non_pad_tokens = e.at("non_pad_tokens").get<std::uint64_t>();
            m.shards.push_back(std::move(s));
        }
        const auto& t = j.at("totals");
        m.total_sequences = t.at("sequences").get<std::uint64_t>();
        m.total_non_pad_tokens = t.at("non_pad_tokens").get<std::uint64_t>();
        m.total_pad_tokens = t.at("pad_tokens").get<std::uint64_t>();
        m.total_samples = t.value("samples", std::uint64_t{0});
        m.masked_in_tokens = t.value("masked_in_tokens", std::uint64_t{0});
        if (j.contains("per_source")) {
            m.samples_per_source =
                j.at("per_source").at("samples").get<std::map<std::string, std::uint64_t>>();
            m.tokens_per_source =
                j.at("per_source").at("tokens").get<std::map<std::string, std::uint64_t>>();
        }
        return m;
    }

    void save(const std::filesystem::path& path) const { write_file_atomic(path, to_json().dump(2) + "\n"); }

    static Manifest load(const std::filesystem::path& path) {
        return from_json(nlohmann::json::parse(read_file(path)));
    }

    std::string content_hash() const { return sha256_hex(to_json().dump()); }
};

inline std::string shard_basename(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "shard_%06zu", index);
    return buf;
}

/// Streams fixed-length sequences into numbered shard files. Writes a
/// `.partial` marker into the directory on open and removes it in finish();
/// an aborted run leaves the marker behind as evidence of partial output.
class ShardWriter {
  public:
    ShardWriter(std::filesystem::path dir, std::uint64_t shard_size, std::uint64_t seq_len,
                bool mask_plane = false)
        : dir_(std::move(dir)), shard_size_(shard_size), seq_len_(seq_len), mask_plane_(mask_plane) {
        if (shard_size_ == 0) throw std::invalid_argument("shards: shard_size must be > 0");
        std::filesystem::create_directories(dir_);
        std::ofstream marker(dir_ / ".partial");
        if (!marker) throw std::runtime_error("shards: cannot write to " + dir_.string());
    }

    void add(const PackedSequence& seq) {
        nlohmann::json spans = nlohmann::json::array();
        for (const auto& s : seq.spans) {
            spans.push_back({{"doc_id", s.doc_id},
                             {"start", s.start},
                             {"end", s.end},
                             {"continuation", s.continuation},
                             {"augmented", s.augmented}});
        }
        add_raw(seq.tokens, spans, nullptr, seq.non_pad_tokens());
    }

    void add_raw(const TokenSequence& tokens, const nlohmann::json& spans,
                 const std::vector<std::uint8_t>* mask, std::uint64_t non_pad) {
        if (tokens.size() != seq_len_) {
            throw std::invalid_argument("shards: sequence length " + std::to_string(tokens.size()) +
                                        " does not match seq_len " + std::to_string(seq_len_));
        }
        if (mask_plane_ && (!mask || mask->size() != seq_len_)) {
            throw std::invalid_argument("shards: mask plane required but missing or wrong length");
        }
        if (!bin_.is_open()) open_shard();

        nlohmann::json idx_line;
        idx_line["offset"] = current_bytes_;
        idx_line["len"] = seq_len_;
        idx_line["spans"] = spans;
        std::string idx_str = idx_line.dump();
        idx_str.push_back('\n');
        idx_ << idx_str;

        std::string payload;
        payload.reserve(tokens.size() * 4);
        for (TokenId id : tokens) append_u32_le(payload, id);
        bin_.write(payload.data(), static_cast<std::streamsize>(payload.size()));
        bin_hash_->update(payload);
        current_bytes_ += payload.size();

        if (mask_plane_) {
            mask_.write(reinterpret_cast<const char*>(mask->data()),
                        static_cast<std::streamsize>(mask->size()));
            mask_hash_->update(mask->data(), mask->size());
        }
        if (!bin_ || !idx_ || (mask_plane_ && !mask_)) {
            throw std::runtime_error("shards: write failed in " + dir_.string());
        }

        current_.sequences += 1;
        current_.non_pad_tokens += non_pad;
        if (current_.sequences == shard_size_) close_shard();
    }

    /// Closes the open shard and returns the manifest skeleton (shard list
    /// and totals); the caller fills in run-level fields before saving.
    Manifest finish() {
        if (bin_.is_open()) close_shard();
        Manifest m;
        m.seq_len = seq_len_;
        m.shard_size = shard_size_;
        m.has_mask_plane = mask_plane_;
        m.shards = entries_;
        for (const auto& e : entries_) {
            m.total_sequences += e.sequences;
            m.total_non_pad_tokens += e.non_pad_tokens;
        }
        m.total_pad_tokens = m.total_sequences * seq_len_ - m.total_non_pad_tokens;
        std::filesystem::remove(dir_ / ".partial");
        return m;
    }

  private:
    void open_shard() {
        std::string base = shard_basename(entries_.size());
        bin_.open(dir_ / (base + ".bin"), std::ios::binary | std::ios::trunc);
        idx_.open(dir_ / (base + ".idx"), std::ios::binary | std::ios::trunc);
        if (!bin_ || !idx_) throw std::runtime_error("shards: cannot open shard files in " + dir_.string());
        if (mask_plane_) {
            mask_.open(dir_ / (base + ".mask"), std::ios::binary | std::ios::trunc);
            if (!mask_) throw std::runtime_error("shards: cannot open mask plane in " + dir_.string());
            mask_hash_ = std::make_unique<Sha256Stream>();
        }
        bin_hash_ = std::make_unique<Sha256Stream>();
        current_ = ShardEntry{};
        current_.file = base + ".bin";
        current_bytes_ = 0;
    }

    void close_shard() {
        bin_.close();
        idx_.close();
        current_.sha256 = to_hex(bin_hash_->finish());
        bin_hash_.reset();
        if (mask_plane_) {
            mask_.close();
            current_.mask_sha256 = to_hex(mask_hash_->finish());
            mask_hash_.reset();
        }
        entries_.push_back(current_);
    }

    std::filesystem::path dir_;
    std::uint64_t shard_size_;
    std::uint64_t seq_len_;
    bool mask_plane_;
    std::ofstream bin_;
    std::ofstream idx_;
    std::ofstream mask_;
    std::unique_ptr<Sha256Stream> bin_hash_;
    std::unique_ptr<Sha256Stream> mask_hash_;
    ShardEntry current_;
    std::uint64_t current_bytes_ = 0;
    std::vector<ShardEntry> entries_;
};

inline Manifest write_shards(const std::function<std::optional<PackedSequence>()>& seqs,
                             const std::filesystem::path& out_dir, std::uint64_t shard_size,
                             std::uint64_t seq_len) {
    ShardWriter writer(out_dir, shard_size, seq_len, false);
    while (auto s = seqs()) writer.add(*s);
    return writer.finish();
}

/// Reads shards back for verification and recounting. Segment ids are
/// reconstructed from the span table (k-th span of a sequence = segment k).
class ShardReader {
  public:
    explicit ShardReader(std::filesystem::path dir)
        : dir_(std::move(dir)), manifest_(Manifest::load(dir_ / "manifest.json")) {}

    const Manifest& manifest() const { return manifest_; }

    std::vector<PackedSequence> read_shard(std::size_t shard_index) const {
        const auto& entry = manifest_.shards.at(shard_index);
        std::string bin = read_file(dir_ / entry.file);
        std::string base = entry.file.substr(0, entry.file.size() - 4);
        std::string idx = read_file(dir_ / (base + ".idx"));

        std::vector<PackedSequence> out;
        std::istringstream lines(idx);
        std::string line;
        while (std::getline(lines, line)) {
            if (line.empty()) continue;
            auto j = nlohmann::json::parse(line);
            std::uint64_t offset = j.at("offset").get<std::uint64_t>();
            std::uint64_t len = j.at("len").get<std::uint64_t>();
            if (offset + len * 4 > bin.size()) throw std::runtime_error("shards: index points past shard end");
            PackedSequence seq;
            seq.tokens.reserve(len);
            for (std::uint64_t i = 0; i < len; ++i) {
                seq.tokens.push_back(read_u32_le(bin.data() + offset + i * 4));
            }
            seq.segment_ids.assign(len, 0);
            for (const auto& sj : j.at("spans")) {
                PackedSpan span;
                span.doc_id = sj.at("doc_id").get<std::string>();
                span.start = sj.at("start").get<std::size_t>();
                span.end = sj.at("end").get<std::size_t>();
                span.continuation = sj.at("continuation").get<bool>();
                span.augmented = sj.at("augmented").get<bool>();
                std::uint32_t seg = static_cast<std::uint32_t>(seq.spans.size() + 1);
                for (std::size_t t = span.start; t < span.end; ++t) seq.segment_ids[t] = seg;
                seq.spans.push_back(std::move(span));
            }
            out.push_back(std::move(seq));
        }
        return out;
    }

    std::vector<PackedSequence> read_all() const {
        std::vector<PackedSequence> out;
        for (std::size_t i = 0; i < manifest_.shards.size(); ++i) {
            auto seqs = read_shard(i);
            out.insert(out.end(), std::make_move_iterator(seqs.begin()), std::make_move_iterator(seqs.end()));
        }
        return out;
    }

    /// Recomputes every shard's sha256 and compares with the manifest.
    bool verify_hashes() const {
        for (const auto& e : manifest_.shards) {
            if (to_hex(sha256_file(dir_ / e.file)) != e.sha256) return false;
            if (!e.mask_sha256.empty()) {
                std::string base = e.file.substr(0, e.file.size() - 4);
                if (to_hex(sha256_file(dir_ / (base + ".mask"))) != e.mask_sha256) return false;
            }
        }
        return true;
    }

  private:
    std::filesystem::path dir_;
    Manifest manifest_;
};

}  // namespace tpt
