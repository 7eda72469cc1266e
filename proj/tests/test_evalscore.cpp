#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <random>

#include "oracles.hpp"
#include "tpt/evalscore.hpp"

using tpt::EvalRecord;
using tpt::TaskKind;
using tpt::extract_answer;
using tpt::score_sample;

namespace {

EvalRecord rec(const std::string& id, TaskKind kind, const std::string& gold,
               std::vector<std::string> samples) {
    EvalRecord r;
    r.question_id = id;
    r.kind = kind;
    r.gold = gold;
    r.samples = std::move(samples);
    return r;
}

}  // namespace

TEST_CASE("boxed extraction balances braces, last box wins") {
    CHECK(extract_answer("...the answer is \\boxed{890}.", TaskKind::boxed_math) == "890");
    CHECK(extract_answer("\\boxed{\\frac{1}{2}}", TaskKind::boxed_math) == "\\frac{1}{2}");
    CHECK(extract_answer("first \\boxed{1} then \\boxed{2}", TaskKind::boxed_math) == "2");
    CHECK(extract_answer("escaped \\boxed{a\\}b}", TaskKind::boxed_math) == "a\\}b");
    CHECK(extract_answer("nested \\boxed{\\sqrt{x^{2}}}", TaskKind::boxed_math) == "\\sqrt{x^{2}}");
    CHECK(!extract_answer("no box here", TaskKind::boxed_math).has_value());
    CHECK(!extract_answer("unbalanced \\boxed{abc", TaskKind::boxed_math).has_value());
}

TEST_CASE("boxed extraction agrees with the balanced-brace reference parser") {
    std::vector<std::string> cases = {
        "\\boxed{890}",
        "x \\boxed{\\frac{1}{2}} y",
        "\\boxed{a{b{c}d}e}",
        "\\boxed{}",
        "\\boxed{1} and \\boxed{{2}}",
        "\\boxed{\\left(\\frac{a}{b}\\right)}",
        "prefix \\boxed{z\\}q} suffix",
        "\\boxed{broken",
        "plain text",
    };
    for (const auto& s : cases) {
        CHECK(extract_answer(s, TaskKind::boxed_math) == oracle::boxed_reference(s));
    }
}

TEST_CASE("numeric extraction prefers the last #### marker, else the last standalone number") {
    CHECK(extract_answer("So the total is #### 72", TaskKind::numeric) == "72");
    CHECK(extract_answer("#### 1\nrevised: #### 2", TaskKind::numeric) == "2");
    CHECK(extract_answer("#### 1,234.5 done", TaskKind::numeric) == "1,234.5");
    CHECK(extract_answer("x = 5, y = 10, so the sum is 15", TaskKind::numeric) == "15");
    CHECK(extract_answer("the result equals -42 here", TaskKind::numeric) == "-42");
    CHECK(extract_answer("costs 1,000 dollars", TaskKind::numeric) == "1,000");
    CHECK(extract_answer("pi is about 3.14", TaskKind::numeric) == "3.14");
    CHECK(!extract_answer("no answer here", TaskKind::numeric).has_value());
    CHECK(!extract_answer("variables a1b2c3 only", TaskKind::numeric).has_value());
}

TEST_CASE("multiple choice takes the last standalone option letter") {
    CHECK(extract_answer("The answer is (C).", TaskKind::multiple_choice) == "C");
    CHECK(extract_answer("I think the answer is B", TaskKind::multiple_choice) == "B");
    CHECK(extract_answer("B is wrong, so the choice is A", TaskKind::multiple_choice) == "A");
    CHECK(extract_answer("Answer: D", TaskKind::multiple_choice) == "D");
    CHECK(!extract_answer("no options mentioned", TaskKind::multiple_choice).has_value());
    CHECK(!extract_answer("ABC as a word", TaskKind::multiple_choice).has_value());
}

TEST_CASE("extraction is total over arbitrary bytes") {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 500; ++i) {
        std::string junk(rng() % 200, '\0');
        for (auto& c : junk) c = static_cast<char>(rng() & 0xFF);
        CHECK_NOTHROW(extract_answer(junk, TaskKind::numeric));
        CHECK_NOTHROW(extract_answer(junk, TaskKind::boxed_math));
        CHECK_NOTHROW(extract_answer(junk, TaskKind::multiple_choice));
    }
}

TEST_CASE("score_sample canonicalizes numerics to exact rationals") {
    CHECK(score_sample(std::string("890"), "890", TaskKind::numeric));
    CHECK(!score_sample(std::nullopt, "890", TaskKind::numeric));
    CHECK(score_sample(std::string("1,000"), "1000", TaskKind::numeric));
    CHECK(score_sample(std::string("0.50"), "1/2", TaskKind::numeric));
    CHECK(score_sample(std::string(" 42 "), "42", TaskKind::numeric));
    CHECK(score_sample(std::string("-3.5"), "-7/2", TaskKind::numeric));
    CHECK(!score_sample(std::string("890"), "891", TaskKind::numeric));
    CHECK(!score_sample(std::string("0.3333"), "1/3", TaskKind::numeric));
}

TEST_CASE("score_sample normalizes boxed answers") {
    CHECK(score_sample(std::string("890"), "890", TaskKind::boxed_math));
    CHECK(score_sample(std::string(" 890 "), "890", TaskKind::boxed_math));
    CHECK(score_sample(std::string("\\left(x\\right)"), "(x)", TaskKind::boxed_math));
    CHECK(score_sample(std::string("\\frac{1}{2}"), "\\frac{1}{2}", TaskKind::boxed_math));
    CHECK(score_sample(std::string("0.5"), "1/2", TaskKind::boxed_math));  // rational fallback
    CHECK(!score_sample(std::string("\\frac{1}{2}"), "\\frac{1}{3}", TaskKind::boxed_math));
}

TEST_CASE("score_sample compares option letters case-insensitively") {
    CHECK(score_sample(std::string("C"), "c", TaskKind::multiple_choice));
    CHECK(score_sample(std::string("C"), " C ", TaskKind::multiple_choice));
    CHECK(!score_sample(std::string("C"), "D", TaskKind::multiple_choice));
    CHECK(!score_sample(std::nullopt, "C", TaskKind::multiple_choice));
}

TEST_CASE("pass_at_1 averages per-question fractions") {
    auto report = tpt::pass_at_1({rec("q1", TaskKind::boxed_math, "7",
                                      {"the answer is \\boxed{7}", "i think \\boxed{8}"})});
    REQUIRE(report.questions.size() == 1);
    CHECK(report.questions[0].fraction_correct == 0.5);
    CHECK(report.pass_at_1 == 0.5);
}

TEST_CASE("extraction failure scores zero and is counted") {
    auto report = tpt::pass_at_1({rec("q1", TaskKind::numeric, "5", {"no digits at all", "#### 5"})});
    CHECK(report.questions[0].fraction_correct == 0.5);
    CHECK(report.questions[0].extraction_failures == 1);
    CHECK(report.total_extraction_failures == 1);
    CHECK(report.extraction_failure_rate == 0.5);
}

TEST_CASE("sample-count presets per task class") {
    CHECK(tpt::expected_samples_for(TaskKind::numeric) == 64);
    CHECK(tpt::expected_samples_for(TaskKind::code) == 16);
    CHECK(tpt::expected_samples_for(TaskKind::multiple_choice) == 8);
    CHECK(tpt::expected_samples_for(TaskKind::boxed_math) == 4);

    auto report = tpt::pass_at_1({rec("aime-like", TaskKind::numeric, "1", {"#### 1"})});
    CHECK(report.questions[0].expected_samples == 64);
    CHECK(report.questions[0].flagged_missing_samples);
}

TEST_CASE("pass_at_1 equals the nested-mean oracle on random matrices") {
    std::mt19937_64 rng(17);
    for (int round = 0; round < 20; ++round) {
        std::vector<EvalRecord> records;
        std::vector<std::vector<bool>> matrix;
        std::size_t n_q = 1 + rng() % 30;
        for (std::size_t q = 0; q < n_q; ++q) {
            std::size_t n_s = 1 + rng() % 16;
            std::vector<bool> row;
            std::vector<std::string> samples;
            for (std::size_t s = 0; s < n_s; ++s) {
                bool correct = rng() % 2 == 0;
                row.push_back(correct);
                samples.push_back(correct ? "\\boxed{7}" : "\\boxed{9}");
            }
            matrix.push_back(row);
            records.push_back(rec("q" + std::to_string(q), TaskKind::boxed_math, "7", samples));
        }
        auto report = tpt::pass_at_1(records);
        CHECK(report.pass_at_1 == oracle::pass_at_1_reference(matrix));
    }
}

TEST_CASE("flipping a wrong sample to correct never decreases pass_at_1") {
    std::mt19937_64 rng(19);
    std::vector<EvalRecord> records;
    for (int q = 0; q < 10; ++q) {
        std::vector<std::string> samples;
        for (int s = 0; s < 8; ++s) samples.push_back(rng() % 2 ? "\\boxed{1}" : "\\boxed{0}");
        records.push_back(rec("q" + std::to_string(q), TaskKind::boxed_math, "1", samples));
    }
    double base = tpt::pass_at_1(records).pass_at_1;
    for (auto& r : records) {
        for (auto& s : r.samples) {
            if (s == "\\boxed{0}") {
                auto flipped = records;
                s = "\\boxed{1}";
                double now = tpt::pass_at_1(records).pass_at_1;
                CHECK(now >= base);
                records = flipped;  // restore
            }
        }
    }
}

TEST_CASE("pass_at_1 is invariant under sample and question permutations") {
    std::mt19937_64 rng(23);
    std::vector<EvalRecord> records;
    for (int q = 0; q < 12; ++q) {
        std::vector<std::string> samples;
        for (int s = 0; s < 6; ++s) samples.push_back(rng() % 3 ? "\\boxed{1}" : "\\boxed{0}");
        records.push_back(rec("q" + std::to_string(q), TaskKind::boxed_math, "1", samples));
    }
    double before = tpt::pass_at_1(records).pass_at_1;
    std::shuffle(records.begin(), records.end(), rng);
    for (auto& r : records) std::shuffle(r.samples.begin(), r.samples.end(), rng);
    double after = tpt::pass_at_1(records).pass_at_1;
    CHECK(before == Catch::Approx(after).epsilon(1e-12));
}

TEST_CASE("code records score from externally supplied bits") {
    EvalRecord r;
    r.question_id = "code1";
    r.kind = TaskKind::code;
    r.gold = "n/a";
    r.correct_bits = {1, 0, 1, 1};
    auto report = tpt::pass_at_1({r});
    CHECK(report.questions[0].fraction_correct == 0.75);
    CHECK(report.questions[0].samples_scored == 4);
    CHECK(report.extraction_failure_rate == 0.0);  // code samples are not extraction-eligible
}

TEST_CASE("eval records parse from line json") {
    auto j = nlohmann::json::parse(
        R"({"question_id":"q1","task_kind":"boxed_math","gold":"890","samples":["\\boxed{890}"]})");
    auto r = tpt::eval_record_from_json(j);
    REQUIRE(r.has_value());
    CHECK(r->kind == TaskKind::boxed_math);
    CHECK(r->samples.size() == 1);
    CHECK(!tpt::eval_record_from_json(nlohmann::json::parse(R"({"bad":true})")).has_value());
    // invariant violations are rejected, not scored
    CHECK(!tpt::eval_record_from_json(
               nlohmann::json::parse(R"({"question_id":"q","task_kind":"numeric","gold":"","samples":["1"]})"))
               .has_value());
    CHECK(!tpt::eval_record_from_json(
               nlohmann::json::parse(R"({"question_id":"q","task_kind":"numeric","gold":"1","samples":[]})"))
               .has_value());
    CHECK(!tpt::eval_record_from_json(
               nlohmann::json::parse(R"({"question_id":"q","task_kind":"code","gold":"n/a","samples":["x"]})"))
               .has_value());
}
