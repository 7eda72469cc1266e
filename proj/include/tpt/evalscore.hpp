#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "tpt/util.hpp"

namespace tpt {

enum class TaskKind { numeric, boxed_math, multiple_choice, code };

inline const char* task_kind_name(TaskKind k) {
    switch (k) {
        case TaskKind::numeric: return "numeric";
        case TaskKind::boxed_math: return "boxed_math";
        case TaskKind::multiple_choice: return "multiple_choice";
        case TaskKind::code: return "code";
    }
    return "numeric";
}

inline TaskKind task_kind_from_name(std::string_view s) {
    if (s == "numeric") return TaskKind::numeric;
    if (s == "boxed_math") return TaskKind::boxed_math;
    if (s == "multiple_choice") return TaskKind::multiple_choice;
    if (s == "code") return TaskKind::code;
    throw std::invalid_argument("unknown task kind: " + std::string(s));
}

/// How many samples per question each task class is expected to carry when
/// averaging Pass@1: 64 for AIME-style numeric tasks, 16 for code, 8 for
/// GPQA-style multiple choice, 4 for MATH-500-style boxed answers.
inline std::size_t expected_samples_for(TaskKind k) {
    switch (k) {
        case TaskKind::numeric: return 64;
        case TaskKind::code: return 16;
        case TaskKind::multiple_choice: return 8;
        case TaskKind::boxed_math: return 4;
    }
    return 1;
}

struct EvalRecord {
    std::string question_id;
    TaskKind kind = TaskKind::numeric;
    std::string gold;
    std::vector<std::string> samples;
    std::vector<std::uint8_t> correct_bits;  // code tasks: externally supplied correctness
};

inline std::optional<EvalRecord> eval_record_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("question_id") || !j.contains("task_kind") || !j.contains("gold")) {
        return std::nullopt;
    }
    EvalRecord r;
    r.question_id = j.at("question_id").is_string() ? j.at("question_id").get<std::string>()
                                                    : j.at("question_id").dump();
    try {
        r.kind = task_kind_from_name(j.at("task_kind").get<std::string>());
    } catch (const std::exception&) {
        return std::nullopt;
    }
    if (!j.at("gold").is_string()) return std::nullopt;
    r.gold = j.at("gold").get<std::string>();
    if (j.contains("samples") && j.at("samples").is_array()) {
        for (const auto& s : j.at("samples")) {
            if (!s.is_string()) return std::nullopt;
            r.samples.push_back(s.get<std::string>());
        }
    }
    if (j.contains("correct_bits") && j.at("correct_bits").is_array()) {
        for (const auto& b : j.at("correct_bits")) {
            if (!b.is_boolean()) return std::nullopt;
            r.correct_bits.push_back(b.get<bool>() ? 1 : 0);
        }
    }
    // type invariants: gold nonempty, and at least one thing to score
    if (r.gold.empty()) return std::nullopt;
    if (r.kind == TaskKind::code ? r.correct_bits.empty() : r.samples.empty()) return std::nullopt;
    return r;
}

namespace detail {

inline bool is_word_char(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
}

// Scans one number starting at `pos`: optional sign, digits with optional
// 3-digit comma groups, optional decimal part. Returns the end offset or
// npos when no number starts here.
inline std::size_t scan_number(std::string_view s, std::size_t pos) {
    std::size_t i = pos;
    if (i < s.size() && (s[i] == '-' || s[i] == '+')) ++i;
    if (i >= s.size() || !(s[i] >= '0' && s[i] <= '9')) return std::string_view::npos;
    while (i < s.size() && s[i] >= '0' && s[i] <= '9') ++i;
    while (i + 3 < s.size() && s[i] == ',' && s[i + 1] >= '0' && s[i + 1] <= '9' && s[i + 2] >= '0' &&
           s[i + 2] <= '9' && s[i + 3] >= '0' && s[i + 3] <= '9' &&
           (i + 4 >= s.size() || !(s[i + 4] >= '0' && s[i + 4] <= '9'))) {
        i += 4;
    }
    if (i + 1 < s.size() && s[i] == '.' && s[i + 1] >= '0' && s[i + 1] <= '9') {
        i += 1;
        while (i < s.size() && s[i] >= '0' && s[i] <= '9') ++i;
    }
    return i;
}

inline bool standalone_at(std::string_view s, std::size_t begin, std::size_t end) {
    if (begin > 0) {
        char prev = s[begin - 1];
        if (is_word_char(prev) || prev == '.' || prev == ',') return false;
    }
    if (end < s.size() && is_word_char(s[end])) return false;
    return true;
}

inline std::optional<std::string> last_standalone_number(std::string_view s) {
    std::optional<std::string> best;
    for (std::size_t i = 0; i < s.size(); ++i) {
        std::size_t start = i;
        if (s[i] == '-' || s[i] == '+') {
            // sign binds to the number only when directly followed by a digit
            if (i + 1 >= s.size() || !(s[i + 1] >= '0' && s[i + 1] <= '9')) continue;
        } else if (!(s[i] >= '0' && s[i] <= '9')) {
            continue;
        }
        std::size_t end = scan_number(s, start);
        if (end == std::string_view::npos) continue;
        std::size_t digits_begin = (s[start] == '-' || s[start] == '+') ? start + 1 : start;
        if (standalone_at(s, digits_begin, end)) {
            best = std::string(s.substr(start, end - start));
        }
        i = end - 1;
    }
    return best;
}

// GSM8k-style "#### <number>" markers take precedence; the last one wins.
inline std::optional<std::string> last_marker_number(std::string_view s) {
    std::optional<std::string> best;
    std::size_t pos = 0;
    while ((pos = s.find("####", pos)) != std::string_view::npos) {
        std::size_t i = pos + 4;
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
        std::size_t end = scan_number(s, i);
        if (end != std::string_view::npos) best = std::string(s.substr(i, end - i));
        pos += 4;
    }
    return best;
}

// Content of the last \boxed{...}, brace balanced; \{ and \} are literals
// and do not count toward nesting.
inline std::optional<std::string> last_boxed(std::string_view s) {
    static constexpr std::string_view kBoxed = "\\boxed{";
    std::size_t found = std::string_view::npos;
    std::size_t pos = 0;
    while ((pos = s.find(kBoxed, pos)) != std::string_view::npos) {
        found = pos;
        pos += kBoxed.size();
    }
    if (found == std::string_view::npos) return std::nullopt;
    std::size_t start = found + kBoxed.size();
    int depth = 1;
    for (std::size_t i = start; i < s.size(); ++i) {
        char c = s[i];
        if (c == '\\' && i + 1 < s.size() && (s[i + 1] == '{' || s[i + 1] == '}')) {
            ++i;
            continue;
        }
        if (c == '{') ++depth;
        if (c == '}') {
            --depth;
            if (depth == 0) return std::string(s.substr(start, i - start));
        }
    }
    return std::nullopt;  // unbalanced
}

inline std::optional<std::string> last_option_letter(std::string_view s) {
    std::optional<std::string> best;
    for (std::size_t i = 0; i < s.size(); ++i) {
        char c = s[i];
        if (c < 'A' || c > 'J') continue;
        bool prev_ok = i == 0 || !is_word_char(s[i - 1]);
        bool next_ok = i + 1 >= s.size() || !is_word_char(s[i + 1]);
        if (prev_ok && next_ok) best = std::string(1, c);
    }
    return best;
}

// Exact rational arithmetic over int64 with overflow detection; parseable
// forms are integers, decimals, and simple a/b fractions.
struct Rational {
    long long num = 0;
    long long den = 1;
};

inline std::optional<Rational> parse_rational(std::string_view s) {
    std::string t;
    t.reserve(s.size());
    for (char c : s) {
        if (c == ',' || is_ascii_space(c)) continue;
        t.push_back(c);
    }
    if (!t.empty() && t.back() == '.') t.pop_back();
    if (!t.empty() && t.front() == '+') t.erase(t.begin());
    if (t.empty()) return std::nullopt;

    auto slash = t.find('/');
    if (slash != std::string::npos) {
        auto a = parse_rational(std::string_view(t).substr(0, slash));
        auto b = parse_rational(std::string_view(t).substr(slash + 1));
        if (!a || !b || b->num == 0) return std::nullopt;
        Rational r;
        if (__builtin_mul_overflow(a->num, b->den, &r.num)) return std::nullopt;
        if (__builtin_mul_overflow(a->den, b->num, &r.den)) return std::nullopt;
        if (r.den < 0) {
            r.num = -r.num;
            r.den = -r.den;
        }
        return r;
    }

    bool neg = false;
    std::size_t i = 0;
    if (t[0] == '-') {
        neg = true;
        i = 1;
    }
    long long num = 0;
    long long den = 1;
    bool any_digit = false;
    bool seen_dot = false;
    for (; i < t.size(); ++i) {
        char c = t[i];
        if (c == '.') {
            if (seen_dot) return std::nullopt;
            seen_dot = true;
            continue;
        }
        if (c < '0' || c > '9') return std::nullopt;
        any_digit = true;
        if (__builtin_mul_overflow(num, 10LL, &num)) return std::nullopt;
        if (__builtin_add_overflow(num, static_cast<long long>(c - '0'), &num)) return std::nullopt;
        if (seen_dot && __builtin_mul_overflow(den, 10LL, &den)) return std::nullopt;
    }
    if (!any_digit) return std::nullopt;
    if (neg) num = -num;
    return Rational{num, den};
}

inline bool rational_equal(const Rational& a, const Rational& b) {
    long long lhs = 0;
    long long rhs = 0;
    if (__builtin_mul_overflow(a.num, b.den, &lhs)) return false;
    if (__builtin_mul_overflow(b.num, a.den, &rhs)) return false;
    return lhs == rhs;
}

inline std::string canonical_numeric(std::string_view s) {
    std::string out;
    for (char c : s) {
        if (c == ',' || is_ascii_space(c)) continue;
        out.push_back(c);
    }
    if (!out.empty() && out.back() == '.') out.pop_back();
    if (!out.empty() && out.front() == '+') out.erase(out.begin());
    return out;
}

inline std::string normalize_boxed(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size();) {
        if (s.compare(i, 5, "\\left") == 0) {
            i += 5;
            continue;
        }
        if (s.compare(i, 6, "\\right") == 0) {
            i += 6;
            continue;
        }
        out.push_back(s[i]);
        ++i;
    }
    return std::string(trim(out));
}

inline std::string to_upper_ascii(std::string_view s) {
    std::string out(s);
    for (char& c : out) {
        if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
    }
    return out;
}

}  // namespace detail

/// Answer extraction. Total: every input yields a value or absent, never an
/// error. Last match wins throughout, because chain-of-thought outputs state
/// the final answer at the end.
///   numeric          last "#### <number>" marker, else last standalone number
///   boxed_math       content of the last \boxed{...}, brace balanced
///   multiple_choice  last standalone option letter A-J
///   code             no extraction; correctness is supplied externally
inline std::optional<std::string> extract_answer(std::string_view text, TaskKind kind) {
    switch (kind) {
        case TaskKind::numeric: {
            if (auto m = detail::last_marker_number(text)) return m;
            return detail::last_standalone_number(text);
        }
        case TaskKind::boxed_math: return detail::last_boxed(text);
        case TaskKind::multiple_choice: return detail::last_option_letter(text);
        case TaskKind::code: return std::nullopt;
    }
    return std::nullopt;
}

/// Correctness of one extracted answer against gold. Failed extraction is
/// always wrong (it scores zero). Numeric answers compare as exact rationals
/// when both sides parse; boxed answers compare after normalization (outer
/// spacing stripped, \left/\right collapsed) with a rational fallback;
/// option letters compare case-insensitively.
inline bool score_sample(const std::optional<std::string>& extracted, std::string_view gold,
                         TaskKind kind) {
    if (!extracted) return false;
    switch (kind) {
        case TaskKind::numeric: {
            auto a = detail::parse_rational(*extracted);
            auto b = detail::parse_rational(gold);
            if (a && b) return detail::rational_equal(*a, *b);
            return detail::canonical_numeric(*extracted) == detail::canonical_numeric(gold);
        }
        case TaskKind::boxed_math: {
            std::string lhs = detail::normalize_boxed(*extracted);
            std::string rhs = detail::normalize_boxed(gold);
            if (lhs == rhs) return true;
            auto a = detail::parse_rational(lhs);
            auto b = detail::parse_rational(rhs);
            return a && b && detail::rational_equal(*a, *b);
        }
        case TaskKind::multiple_choice:
            return detail::to_upper_ascii(*extracted) == detail::to_upper_ascii(trim(gold));
        case TaskKind::code: return false;  // bits come from correct_bits, not extraction
    }
    return false;
}

struct QuestionScore {
    std::string question_id;
    TaskKind kind = TaskKind::numeric;
    double fraction_correct = 0;
    std::size_t samples_scored = 0;
    std::size_t expected_samples = 0;
    std::size_t extraction_failures = 0;
    bool flagged_missing_samples = false;
};

struct ScoreReport {
    std::vector<QuestionScore> questions;
    double pass_at_1 = 0;
    double extraction_failure_rate = 0;
    std::uint64_t total_samples = 0;
    std::uint64_t total_extraction_failures = 0;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["pass_at_1"] = pass_at_1;
        j["extraction_failure_rate"] = extraction_failure_rate;
        j["total_samples"] = total_samples;
        j["total_extraction_failures"] = total_extraction_failures;
        j["questions"] = nlohmann::json::array();
        for (const auto& q : questions) {
            j["questions"].push_back({{"question_id", q.question_id},
                                      {"task_kind", task_kind_name(q.kind)},
                                      {"fraction_correct", q.fraction_correct},
                                      {"samples", q.samples_scored},
                                      {"expected_samples", q.expected_samples},
                                      {"extraction_failures", q.extraction_failures},
                                      {"flagged_missing_samples", q.flagged_missing_samples}});
        }
        return j;
    }
};

/// Averaged Pass@1: per question the fraction of correct samples, then the
/// unweighted mean over questions. Questions with fewer samples than their
/// task preset still count, flagged. Code questions score from correct_bits.
inline ScoreReport pass_at_1(const std::vector<EvalRecord>& records) {
    ScoreReport report;
    double fraction_sum = 0;
    std::uint64_t extraction_eligible = 0;
    for (const auto& rec : records) {
        QuestionScore q;
        q.question_id = rec.question_id;
        q.kind = rec.kind;
        q.expected_samples = expected_samples_for(rec.kind);
        std::size_t correct = 0;
        if (rec.kind == TaskKind::code) {
            q.samples_scored = rec.correct_bits.size();
            for (auto b : rec.correct_bits) correct += b ? 1 : 0;
        } else {
            q.samples_scored = rec.samples.size();
            for (const auto& s : rec.samples) {
                auto extracted = extract_answer(s, rec.kind);
                if (!extracted) ++q.extraction_failures;
                if (score_sample(extracted, rec.gold, rec.kind)) ++correct;
            }
            extraction_eligible += rec.samples.size();
            report.total_extraction_failures += q.extraction_failures;
        }
        q.flagged_missing_samples = q.samples_scored < q.expected_samples;
        q.fraction_correct =
            q.samples_scored == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(q.samples_scored);
        fraction_sum += q.fraction_correct;
        report.total_samples += q.samples_scored;
        report.questions.push_back(std::move(q));
    }
    report.pass_at_1 = records.empty() ? 0.0 : fraction_sum / static_cast<double>(records.size());
    report.extraction_failure_rate =
        extraction_eligible == 0
            ? 0.0
            : static_cast<double>(report.total_extraction_failures) / static_cast<double>(extraction_eligible);
    return report;
}

inline std::string render_score_report(const ScoreReport& report) {
    std::ostringstream out;
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-24s %-16s %10s %8s %10s\n", "question", "kind", "pass@1", "samples",
                  "no-answer");
    out << buf;
    for (const auto& q : report.questions) {
        std::snprintf(buf, sizeof(buf), "%-24s %-16s %10.4f %5zu/%-2zu %10zu%s\n", q.question_id.c_str(),
                      task_kind_name(q.kind), q.fraction_correct, q.samples_scored, q.expected_samples,
                      q.extraction_failures, q.flagged_missing_samples ? "  [missing samples]" : "");
        out << buf;
    }
    std::snprintf(buf, sizeof(buf), "\npass@1 over %zu questions: %.4f\nextraction failure rate: %.4f\n",
                  report.questions.size(), report.pass_at_1, report.extraction_failure_rate);
    out << buf;
    return out.str();
}

}  // namespace tpt
