#include <catch2/catch_amalgamated.hpp>

#include <numeric>
#include <random>

#include "oracles.hpp"
#include "test_util.hpp"
#include "tpt/sftpack.hpp"

using tpt::ChatExample;
using tpt::ChatTemplate;
using tpt::PackedSFTSequence;
using tpt::RenderedExample;
using tpt::Role;
using tpt::Tokenizer;
using tpt::TokenizerSpec;

namespace {

Tokenizer byte_tok() { return Tokenizer::load(TokenizerSpec{}); }

ChatExample chat(const std::string& id, std::vector<std::pair<Role, std::string>> turns) {
    ChatExample ex;
    ex.example_id = id;
    for (auto& [role, text] : turns) ex.messages.push_back({role, text});
    return ex;
}

RenderedExample fixed_example(const std::string& id, std::size_t n_tokens) {
    RenderedExample ex;
    ex.example_id = id;
    ex.tokens.assign(n_tokens, 7);
    ex.loss_mask.assign(n_tokens, 0);
    return ex;
}

std::vector<PackedSFTSequence> pack_all(std::vector<RenderedExample> examples, std::size_t seq_len,
                                        tpt::SFTPackStats* stats_out = nullptr) {
    std::vector<PackedSFTSequence> out;
    tpt::SFTPacker packer(seq_len, 0, [&](PackedSFTSequence s) { out.push_back(std::move(s)); });
    for (auto& ex : examples) packer.add(std::move(ex));
    packer.finish();
    if (stats_out) *stats_out = packer.stats();
    return out;
}

}  // namespace

TEST_CASE("render_chat masks exactly the assistant region") {
    auto tok = byte_tok();
    ChatTemplate tpl;
    auto ex = chat("e1", {{Role::user, "Q"}, {Role::assistant, "A"}});
    auto rendered = tpt::render_chat(ex, tpl, tok);
    REQUIRE(rendered.has_value());

    // byte tokenizer: token index == byte offset in the rendered string
    std::string expect = tpl.user_header + "Q" + tpl.end_of_turn + tpl.assistant_header + "A" + tpl.end_of_turn;
    CHECK(tok.decode(rendered->tokens) == expect);

    std::size_t a_pos = tpl.user_header.size() + 1 + tpl.end_of_turn.size() + tpl.assistant_header.size();
    for (std::size_t i = 0; i < rendered->loss_mask.size(); ++i) {
        bool in_answer = i >= a_pos && i < a_pos + 1 + tpl.end_of_turn.size();  // "A" + its end-of-turn
        CHECK(rendered->loss_mask[i] == (in_answer ? 1 : 0));
    }
}

TEST_CASE("system prompts stay masked out") {
    auto tok = byte_tok();
    ChatTemplate tpl;
    auto ex = chat("e2", {{Role::system, "be terse"}, {Role::user, "Q"}, {Role::assistant, "A"}});
    auto rendered = tpt::render_chat(ex, tpl, tok);
    REQUIRE(rendered.has_value());
    CHECK(rendered->masked_in() == 1 + tpl.end_of_turn.size());
}

TEST_CASE("mask_end_of_turn switch controls the end-of-turn token") {
    auto tok = byte_tok();
    ChatTemplate tpl;
    tpl.mask_end_of_turn = false;
    auto ex = chat("e3", {{Role::user, "Q"}, {Role::assistant, "ANSWER"}});
    auto rendered = tpt::render_chat(ex, tpl, tok);
    REQUIRE(rendered.has_value());
    CHECK(rendered->masked_in() == 6);
}

TEST_CASE("mask boundaries agree with a re-render string-search oracle") {
    auto tok = byte_tok();
    ChatTemplate tpl;
    std::mt19937_64 rng(55);
    for (int round = 0; round < 30; ++round) {
        std::vector<std::pair<Role, std::string>> turns;
        if (rng() % 2) turns.push_back({Role::system, testutil::random_ascii(rng, 1 + rng() % 30)});
        std::size_t n_pairs = 1 + rng() % 4;
        std::vector<std::string> assistant_texts;
        for (std::size_t i = 0; i < n_pairs; ++i) {
            turns.push_back({Role::user, testutil::random_ascii(rng, 1 + rng() % 40)});
            assistant_texts.push_back(testutil::random_ascii(rng, 1 + rng() % 60));
            turns.push_back({Role::assistant, assistant_texts.back()});
        }
        auto rendered = tpt::render_chat(chat("r", turns), tpl, tok);
        REQUIRE(rendered.has_value());

        // oracle: rebuild the full string independently, walk assistant spans
        std::string full;
        std::vector<std::pair<std::size_t, std::size_t>> expect_spans;
        for (const auto& [role, text] : turns) {
            full += tpl.header_for(role);
            if (role == Role::assistant) {
                expect_spans.push_back({full.size(), full.size() + text.size() + tpl.end_of_turn.size()});
            }
            full += text;
            full += tpl.end_of_turn;
        }
        REQUIRE(tok.decode(rendered->tokens) == full);
        std::vector<std::uint8_t> expect_mask(full.size(), 0);
        for (auto [b, e] : expect_spans) {
            for (std::size_t i = b; i < e; ++i) expect_mask[i] = 1;
        }
        CHECK(rendered->loss_mask == expect_mask);
    }
}

TEST_CASE("malformed role structures are rejected") {
    auto tok = byte_tok();
    ChatTemplate tpl;
    CHECK(!tpt::render_chat(chat("no-assistant", {{Role::user, "Q"}}), tpl, tok).has_value());
    CHECK(!tpt::render_chat(chat("double-user", {{Role::user, "a"}, {Role::user, "b"}}), tpl, tok)
               .has_value());
    CHECK(!tpt::render_chat(chat("assistant-first", {{Role::assistant, "a"}}), tpl, tok).has_value());
    CHECK(!tpt::render_chat(chat("system-mid", {{Role::user, "q"}, {Role::system, "s"}}), tpl, tok)
               .has_value());
    std::string why;
    CHECK(!tpt::render_chat(chat("empty", {}), tpl, tok, &why).has_value());
    CHECK(!why.empty());
}

TEST_CASE("pack_sft: three 10k examples share one 32768 sequence") {
    tpt::SFTPackStats stats;
    auto seqs = pack_all({fixed_example("a", 10000), fixed_example("b", 10000), fixed_example("c", 10000)},
                         32768, &stats);
    REQUIRE(seqs.size() == 1);
    CHECK(seqs[0].tokens.size() == 32768);
    REQUIRE(seqs[0].spans.size() == 3);
    CHECK(seqs[0].spans[2].end == 30000);
    CHECK(stats.pad_tokens == 2768);
    CHECK(seqs[0].segment_ids[0] == 1);
    CHECK(seqs[0].segment_ids[10000] == 2);
    CHECK(seqs[0].segment_ids[20000] == 3);
    CHECK(seqs[0].segment_ids[30000] == 0);
}

TEST_CASE("pack_sft never splits an example across sequences") {
    std::mt19937_64 rng(66);
    std::vector<RenderedExample> examples;
    std::vector<std::pair<std::string, std::size_t>> ref;
    for (int i = 0; i < 200; ++i) {
        std::size_t len = 1 + rng() % 500;
        examples.push_back(fixed_example("e" + std::to_string(i), len));
        ref.push_back({"e" + std::to_string(i), len});
    }
    auto seqs = pack_all(examples, 512);
    auto want = oracle::first_fit_reference(ref, 512);
    REQUIRE(seqs.size() == want.size());
    for (std::size_t b = 0; b < seqs.size(); ++b) {
        REQUIRE(seqs[b].spans.size() == want[b].size());
        for (std::size_t k = 0; k < want[b].size(); ++k) {
            CHECK(seqs[b].spans[k].example_id == want[b][k].first);
            CHECK(seqs[b].spans[k].end - seqs[b].spans[k].start == want[b][k].second);
        }
        // hard isolation: spans tile [0, end) with distinct segment ids
        std::size_t cursor = 0;
        for (std::size_t k = 0; k < seqs[b].spans.size(); ++k) {
            CHECK(seqs[b].spans[k].start == cursor);
            cursor = seqs[b].spans[k].end;
            for (std::size_t t = seqs[b].spans[k].start; t < seqs[b].spans[k].end; ++t) {
                CHECK(seqs[b].segment_ids[t] == k + 1);
            }
        }
    }
}

TEST_CASE("oversize examples truncate the oldest thinking and stay alone") {
    auto tok = byte_tok();
    ChatTemplate tpl;
    std::string thinking(40000, 't');
    std::string answer = "FINAL-ANSWER";
    auto ex = chat("big", {{Role::user, "Q"}, {Role::assistant, thinking + answer}});
    auto rendered = tpt::render_chat(ex, tpl, tok);
    REQUIRE(rendered.has_value());
    REQUIRE(rendered->tokens.size() > 32768);

    tpt::SFTPackStats stats;
    auto seqs = pack_all({std::move(*rendered), fixed_example("small", 10)}, 32768, &stats);
    CHECK(stats.truncated == 1);
    REQUIRE(seqs.size() == 2);  // the oversize one is sealed alone
    REQUIRE(seqs[0].spans.size() == 1);
    CHECK(seqs[0].spans[0].truncated);
    CHECK(seqs[0].spans[0].end == 32768);
    // the final answer survives at the end of the assistant span
    std::string text = tok.decode(
        tpt::TokenSequence(seqs[0].tokens.begin(), seqs[0].tokens.begin() + 32768));
    CHECK(text.find(answer + tpl.end_of_turn) != std::string::npos);
    CHECK(seqs[1].spans[0].example_id == "small");
}

TEST_CASE("loss-mask token conservation through packing") {
    auto tok = byte_tok();
    ChatTemplate tpl;
    std::mt19937_64 rng(88);
    std::vector<RenderedExample> rendered;
    std::uint64_t expect_masked = 0;
    for (int i = 0; i < 300; ++i) {
        std::string user = testutil::random_ascii(rng, 1 + rng() % 80);
        std::string assistant = testutil::random_ascii(rng, 1 + rng() % 120);
        auto r = tpt::render_chat(chat("e" + std::to_string(i), {{Role::user, user}, {Role::assistant, assistant}}),
                                  tpl, tok);
        REQUIRE(r.has_value());
        expect_masked += assistant.size() + tpl.end_of_turn.size();  // independent count
        rendered.push_back(std::move(*r));
    }
    tpt::SFTPackStats stats;
    auto seqs = pack_all(std::move(rendered), 2048, &stats);
    CHECK(stats.masked_in_tokens == expect_masked);
    std::uint64_t mask_sum = 0;
    for (const auto& s : seqs) mask_sum += std::accumulate(s.loss_mask.begin(), s.loss_mask.end(), std::uint64_t{0});
    CHECK(mask_sum == expect_masked);
}

TEST_CASE("sft packing is deterministic given input order") {
    std::mt19937_64 rng(99);
    std::vector<std::size_t> lens;
    for (int i = 0; i < 100; ++i) lens.push_back(1 + rng() % 300);
    auto run = [&]() {
        std::vector<RenderedExample> ex;
        for (std::size_t i = 0; i < lens.size(); ++i) ex.push_back(fixed_example("e" + std::to_string(i), lens[i]));
        return pack_all(std::move(ex), 512);
    };
    auto a = run();
    auto b = run();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].tokens == b[i].tokens);
        CHECK(a[i].segment_ids == b[i].segment_ids);
    }
}

TEST_CASE("sft shards carry a parallel mask plane") {
    auto tok = byte_tok();
    ChatTemplate tpl;
    testutil::TempDir dir;
    tpt::ShardWriter writer(dir.path, 8, 256, true);
    tpt::SFTPacker packer(256, tok.specials().pad,
                          [&](PackedSFTSequence s) { tpt::write_sft_sequence(writer, s); });
    std::uint64_t expect_masked = 0;
    for (int i = 0; i < 20; ++i) {
        auto r = tpt::render_chat(
            chat("e" + std::to_string(i), {{Role::user, "ask " + std::to_string(i)}, {Role::assistant, "reply"}}),
            tpl, tok);
        REQUIRE(r.has_value());
        expect_masked += r->masked_in();
        packer.add(std::move(*r));
    }
    packer.finish();
    auto manifest = writer.finish();
    manifest.save(dir.path / "manifest.json");

    std::uint64_t mask_bytes = 0;
    for (const auto& e : manifest.shards) {
        CHECK(!e.mask_sha256.empty());
        std::string base = e.file.substr(0, e.file.size() - 4);
        std::string mask = tpt::read_file(dir.path / (base + ".mask"));
        for (char c : mask) mask_bytes += static_cast<unsigned char>(c);
    }
    CHECK(mask_bytes == expect_masked);
}
