#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tpt/corpus.hpp"
#include "tpt/thinkgen.hpp"
#include "tpt/tokenizer.hpp"
#include "tpt/util.hpp"

namespace tpt {

struct TokenSpan {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t size() const { return end - begin; }
    bool empty() const { return begin == end; }
};

/// One training sample: the document and (when generation succeeded) its
/// thinking trajectory, laid out as
///   [BOD, doc tokens, BOT, thinking tokens, EOD]
/// or [BOD, doc tokens, EOD] when unaugmented.
struct AugmentedSample {
    std::string doc_id;
    std::string source_id;
    TokenSequence tokens;
    TokenSpan doc_span;
    TokenSpan thinking_span;
    bool augmented = false;
};

inline AugmentedSample make_unaugmented(const Document& doc, const Tokenizer& trainee) {
    const auto& sp = trainee.specials();
    AugmentedSample s;
    s.doc_id = doc.doc_id;
    s.source_id = doc.source_id;
    TokenSequence doc_tokens = trainee.encode(doc.text);
    s.tokens.reserve(doc_tokens.size() + 2);
    s.tokens.push_back(sp.begin_document);
    s.doc_span = {1, 1 + doc_tokens.size()};
    s.tokens.insert(s.tokens.end(), doc_tokens.begin(), doc_tokens.end());
    s.tokens.push_back(sp.end_document);
    s.thinking_span = {s.doc_span.end, s.doc_span.end};
    s.augmented = false;
    return s;
}

/// Concatenates document and trajectory into one sample. A trajectory that
/// failed (finish_reason=error) or came back empty falls back to the
/// unaugmented layout so the document is never dropped.
inline AugmentedSample augment(const Document& doc, const ThinkingTrajectory& traj,
                               const Tokenizer& trainee) {
    if (traj.doc_id != doc.doc_id) {
        throw std::invalid_argument("augment: trajectory doc_id '" + traj.doc_id +
                                    "' does not match document '" + doc.doc_id + "'");
    }
    if (traj.finish_reason == FinishReason::error || traj.text.empty()) {
        return make_unaugmented(doc, trainee);
    }
    const auto& sp = trainee.specials();
    AugmentedSample s;
    s.doc_id = doc.doc_id;
    s.source_id = doc.source_id;
    TokenSequence doc_tokens = trainee.encode(doc.text);
    TokenSequence think_tokens = trainee.encode(traj.text);
    s.tokens.reserve(doc_tokens.size() + think_tokens.size() + 3);
    s.tokens.push_back(sp.begin_document);
    s.doc_span = {1, 1 + doc_tokens.size()};
    s.tokens.insert(s.tokens.end(), doc_tokens.begin(), doc_tokens.end());
    s.tokens.push_back(sp.begin_thinking);
    s.thinking_span = {s.tokens.size(), s.tokens.size() + think_tokens.size()};
    s.tokens.insert(s.tokens.end(), think_tokens.begin(), think_tokens.end());
    s.tokens.push_back(sp.end_document);
    s.augmented = true;
    return s;
}

using SampleStream = std::function<std::optional<AugmentedSample>()>;

/// A mixable source: how many samples one pass holds, how many tokens they
/// carry, and a factory that opens a fresh pass over them.
struct MixSource {
    std::string source_id;
    std::uint64_t sample_count = 0;
    std::uint64_t token_count = 0;
    std::function<SampleStream()> open;
};

struct MixtureSpec {
    struct SourceWeight {
        std::string source_id;
        double weight = 1.0;
    };
    enum class Weighting { sample_count, token_count };

    std::vector<SourceWeight> sources;
    std::uint64_t token_budget = 0;
    std::uint64_t seed = 0;
    double max_epochs_per_source = 1.0;  // 1.0 = every sample used at most once
    Weighting weighting = Weighting::sample_count;

    void validate() const {
        if (token_budget == 0) throw std::invalid_argument("mixture: token_budget must be > 0");
        if (!(max_epochs_per_source > 0)) {
            throw std::invalid_argument("mixture: max_epochs_per_source must be > 0");
        }
        for (const auto& s : sources) {
            if (!(s.weight > 0)) {
                throw std::invalid_argument("mixture: weight for source '" + s.source_id +
                                            "' must be > 0");
            }
        }
    }

    double weight_for(const std::string& source_id) const {
        for (const auto& s : sources) {
            if (s.source_id == source_id) return s.weight;
        }
        throw std::invalid_argument("mixture: no weight configured for source '" + source_id + "'");
    }
};

struct MixStats {
    std::uint64_t total_samples = 0;
    std::uint64_t total_tokens = 0;
    std::map<std::string, std::uint64_t> samples_per_source;
    std::map<std::string, std::uint64_t> tokens_per_source;
    std::vector<std::string> warnings;
};

/// Seeded multinomial mixing. Each draw picks source s with probability
/// proportional to weight(s) x remaining mass(s) (sample count or token
/// count); sources exhaust after max_epochs passes and streams reopen at
/// pass boundaries. Emission stops once the cumulative token count reaches
/// the budget (the final sample may cross it) or everything is exhausted.
/// Strictly sequential: one cursor, one consumer.
inline MixStats mix(std::vector<MixSource> sources, const MixtureSpec& spec,
                    const std::function<void(AugmentedSample)>& emit) {
    spec.validate();
    MixStats stats;

    struct State {
        MixSource src;
        double weight = 1.0;
        std::uint64_t capacity = 0;        // total draws allowed across epochs
        std::uint64_t token_capacity = 0;  // same, in tokens
        std::uint64_t drawn = 0;
        std::uint64_t tokens_drawn = 0;
        std::uint64_t drawn_this_pass = 0;
        SampleStream stream;
    };

    std::vector<State> states;
    for (auto& src : sources) {
        double w = spec.weight_for(src.source_id);  // throws if a source lacks a weight
        if (src.sample_count == 0) {
            stats.warnings.push_back("source '" + src.source_id + "' is empty; excluded from mixing");
            continue;
        }
        State st;
        st.weight = w;
        st.capacity = static_cast<std::uint64_t>(spec.max_epochs_per_source *
                                                 static_cast<double>(src.sample_count));
        st.token_capacity = static_cast<std::uint64_t>(spec.max_epochs_per_source *
                                                       static_cast<double>(src.token_count));
        st.src = std::move(src);
        states.push_back(std::move(st));
    }

    SplitMix64 rng(spec.seed);
    auto mass = [&](const State& st) -> double {
        std::uint64_t remaining = spec.weighting == MixtureSpec::Weighting::sample_count
                                      ? (st.capacity > st.drawn ? st.capacity - st.drawn : 0)
                                      : (st.token_capacity > st.tokens_drawn
                                             ? st.token_capacity - st.tokens_drawn
                                             : 0);
        return st.weight * static_cast<double>(remaining);
    };

    while (stats.total_tokens < spec.token_budget) {
        double total_mass = 0;
        for (const auto& st : states) total_mass += mass(st);
        if (total_mass <= 0) break;

        double r = rng.next_double() * total_mass;
        State* picked = nullptr;
        double acc = 0;
        for (auto& st : states) {
            acc += mass(st);
            if (r < acc) {
                picked = &st;
                break;
            }
        }
        if (!picked) {
            for (auto it = states.rbegin(); it != states.rend(); ++it) {
                if (mass(*it) > 0) {
                    picked = &*it;
                    break;
                }
            }
            if (!picked) break;
        }

        if (!picked->stream || picked->drawn_this_pass == picked->src.sample_count) {
            picked->stream = picked->src.open();
            picked->drawn_this_pass = 0;
        }
        auto sample = picked->stream();
        if (!sample) {
            // Stream ended before the declared sample_count; treat as exhausted.
            stats.warnings.push_back("source '" + picked->src.source_id +
                                     "' ended early; declared size was too large");
            picked->capacity = picked->drawn;
            picked->token_capacity = picked->tokens_drawn;
            continue;
        }
        ++picked->drawn;
        ++picked->drawn_this_pass;
        std::uint64_t n = sample->tokens.size();
        picked->tokens_drawn += n;
        stats.total_samples += 1;
        stats.total_tokens += n;
        stats.samples_per_source[picked->src.source_id] += 1;
        stats.tokens_per_source[picked->src.source_id] += n;
        emit(std::move(*sample));
    }
    return stats;
}

struct PackedSpan {
    std::string doc_id;
    std::size_t start = 0;  // token index within the sequence
    std::size_t end = 0;
    bool continuation = false;  // true when this chunk continues a sample from the previous sequence
    bool augmented = false;
};

/// Fixed-length training sequence. segment_ids label each token with the
/// 1-based index of its sample chunk within the sequence; padding is segment 0.
struct PackedSequence {
    TokenSequence tokens;
    std::vector<std::uint32_t> segment_ids;
    std::vector<PackedSpan> spans;

    std::size_t non_pad_tokens() const {
        std::size_t n = 0;
        for (const auto& s : spans) n += s.end - s.start;
        return n;
    }
};

struct PackStats {
    std::uint64_t samples_in = 0;
    std::uint64_t tokens_in = 0;
    std::uint64_t sequences_out = 0;
    std::uint64_t non_pad_tokens = 0;
    std::uint64_t pad_tokens = 0;
};

/// Greedy sequential packer. Samples fill sequences in arrival order; a
/// sample longer than the remaining room spills into following sequences
/// with the continuation flag set, so nothing is ever dropped or cut. The
/// final partial sequence is padded out. Token conservation holds exactly:
/// non-pad tokens out == sample tokens in.
class SequencePacker {
  public:
    SequencePacker(std::size_t seq_len, TokenId pad_id,
                   std::function<void(PackedSequence)> emit)
        : seq_len_(seq_len), pad_id_(pad_id), emit_(std::move(emit)) {
        if (seq_len_ == 0) throw std::invalid_argument("pack: seq_len must be > 0");
        reset_current();
    }

    void add(const AugmentedSample& sample) {
        ++stats_.samples_in;
        stats_.tokens_in += sample.tokens.size();
        std::size_t offset = 0;
        while (offset < sample.tokens.size()) {
            std::size_t room = seq_len_ - current_.tokens.size();
            if (room == 0) {
                flush_full();
                continue;
            }
            std::size_t chunk = std::min(room, sample.tokens.size() - offset);
            PackedSpan span;
            span.doc_id = sample.doc_id;
            span.start = current_.tokens.size();
            span.end = span.start + chunk;
            span.continuation = offset > 0;
            span.augmented = sample.augmented;
            std::uint32_t seg = static_cast<std::uint32_t>(current_.spans.size() + 1);
            current_.tokens.insert(current_.tokens.end(), sample.tokens.begin() + static_cast<std::ptrdiff_t>(offset),
                                   sample.tokens.begin() + static_cast<std::ptrdiff_t>(offset + chunk));
            current_.segment_ids.insert(current_.segment_ids.end(), chunk, seg);
            current_.spans.push_back(std::move(span));
            offset += chunk;
        }
        if (current_.tokens.size() == seq_len_) flush_full();
    }

    /// Emits the trailing partial sequence (padded) if any.
    void finish() {
        if (!current_.tokens.empty()) {
            std::size_t pad = seq_len_ - current_.tokens.size();
            current_.tokens.insert(current_.tokens.end(), pad, pad_id_);
            current_.segment_ids.insert(current_.segment_ids.end(), pad, 0);
            stats_.pad_tokens += pad;
            emit_sequence();
        }
    }

    const PackStats& stats() const { return stats_; }

  private:
    void flush_full() {
        emit_sequence();
    }

    void emit_sequence() {
        stats_.sequences_out += 1;
        stats_.non_pad_tokens += current_.non_pad_tokens();
        emit_(std::move(current_));
        reset_current();
    }

    void reset_current() {
        current_ = PackedSequence{};
        current_.tokens.reserve(seq_len_);
        current_.segment_ids.reserve(seq_len_);
    }

    std::size_t seq_len_;
    TokenId pad_id_;
    std::function<void(PackedSequence)> emit_;
    PackedSequence current_;
    PackStats stats_;
};

inline PackStats pack(const SampleStream& samples, std::size_t seq_len, TokenId pad_id,
                      const std::function<void(PackedSequence)>& emit) {
    SequencePacker packer(seq_len, pad_id, emit);
    while (auto s = samples()) packer.add(*s);
    packer.finish();
    return packer.stats();
}

}  // namespace tpt
