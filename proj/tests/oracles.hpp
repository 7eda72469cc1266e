#pragma once

// Independent reference implementations the tests check the library against.
// Everything here is deliberately brute force and shares no code with the
// implementation paths it verifies.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tpt/tokenizer.hpp"

namespace oracle {

// Maximal prefix whose token count fits, found by re-encoding every prefix.
inline std::string truncate_brute_force(const tpt::Tokenizer& tok, std::string_view text,
                                        std::size_t max_tokens) {
    std::size_t best = 0;
    for (std::size_t p = 0; p <= text.size(); ++p) {
        if (tok.encode(text.substr(0, p)).size() <= max_tokens) best = p;
    }
    return std::string(text.substr(0, best));
}

// Hash-set duplicate filter over trimmed text.
inline std::vector<std::string> dedup_set_filter(const std::vector<std::string>& texts) {
    std::vector<std::string> out;
    std::map<std::string, bool> seen;
    for (const auto& t : texts) {
        std::string key(tpt::rtrim(t));
        if (!seen[key]) {
            seen[key] = true;
            out.push_back(t);
        }
    }
    return out;
}

// Reference greedy packer: builds the whole span layout with plain loops over
// materialized vectors, no streaming state machine.
struct RefSpan {
    std::string doc_id;
    std::size_t start = 0;
    std::size_t end = 0;
    bool continuation = false;
};

struct RefSequence {
    std::vector<tpt::TokenId> tokens;
    std::vector<RefSpan> spans;
};

inline std::vector<RefSequence> pack_reference(const std::vector<std::pair<std::string, std::vector<tpt::TokenId>>>& samples,
                                               std::size_t seq_len, tpt::TokenId pad) {
    std::vector<RefSequence> seqs;
    RefSequence cur;
    auto flush = [&]() {
        while (cur.tokens.size() < seq_len) cur.tokens.push_back(pad);
        seqs.push_back(cur);
        cur = RefSequence{};
    };
    for (const auto& [doc_id, toks] : samples) {
        std::size_t off = 0;
        while (off < toks.size()) {
            if (cur.tokens.size() == seq_len) flush();
            std::size_t room = seq_len - cur.tokens.size();
            std::size_t chunk = std::min(room, toks.size() - off);
            RefSpan span{doc_id, cur.tokens.size(), cur.tokens.size() + chunk, off > 0};
            for (std::size_t i = 0; i < chunk; ++i) cur.tokens.push_back(toks[off + i]);
            cur.spans.push_back(span);
            off += chunk;
        }
    }
    if (!cur.spans.empty() || !cur.tokens.empty()) {
        if (!cur.tokens.empty()) flush();
    }
    return seqs;
}

// First-fit simulator for SFT packing: examples in order, first open bin with
// room, bins emitted in creation order.
inline std::vector<std::vector<std::pair<std::string, std::size_t>>> first_fit_reference(
    const std::vector<std::pair<std::string, std::size_t>>& examples, std::size_t seq_len) {
    std::vector<std::vector<std::pair<std::string, std::size_t>>> bins;
    std::vector<std::size_t> used;
    for (const auto& [id, len] : examples) {
        bool placed = false;
        for (std::size_t b = 0; b < bins.size(); ++b) {
            if (used[b] + len <= seq_len) {
                bins[b].push_back({id, len});
                used[b] += len;
                placed = true;
                break;
            }
        }
        if (!placed) {
            bins.push_back({{id, len}});
            used.push_back(len);
        }
    }
    return bins;
}

// Balanced-brace reference parser for \boxed{...}: returns the content of the
// last box, tracking nesting with an explicit stack and treating \{ \} as
// literals.
inline std::optional<std::string> boxed_reference(std::string_view s) {
    std::optional<std::string> best;
    for (std::size_t i = 0; i + 7 <= s.size(); ++i) {
        if (s.compare(i, 7, "\\boxed{") != 0) continue;
        std::vector<char> stack{'{'};
        std::string content;
        bool closed = false;
        for (std::size_t j = i + 7; j < s.size() && !closed; ++j) {
            char c = s[j];
            if (c == '\\' && j + 1 < s.size() && (s[j + 1] == '{' || s[j + 1] == '}')) {
                content += c;
                content += s[j + 1];
                ++j;
                continue;
            }
            if (c == '{') stack.push_back('{');
            if (c == '}') {
                stack.pop_back();
                if (stack.empty()) {
                    closed = true;
                    break;
                }
            }
            content += c;
        }
        if (closed) best = content;
    }
    return best;
}

// Nested-mean reference for averaged pass@1 over a correctness matrix.
inline double pass_at_1_reference(const std::vector<std::vector<bool>>& matrix) {
    if (matrix.empty()) return 0.0;
    double sum = 0;
    for (const auto& row : matrix) {
        std::size_t correct = 0;
        for (bool b : row) correct += b ? 1 : 0;
        sum += row.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(row.size());
    }
    return sum / static_cast<double>(matrix.size());
}

// Regularized upper incomplete gamma Q(a, x), series + continued fraction,
// good to ~1e-10 for the degrees of freedom the tests use.
inline double gamma_q(double a, double x) {
    if (x < 0 || a <= 0) return 1.0;
    if (x == 0) return 1.0;
    auto gln = std::lgamma(a);
    if (x < a + 1.0) {
        // series for P(a,x), return 1 - P
        double ap = a;
        double sum = 1.0 / a;
        double del = sum;
        for (int n = 0; n < 500; ++n) {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if (std::fabs(del) < std::fabs(sum) * 1e-14) break;
        }
        double p = sum * std::exp(-x + a * std::log(x) - gln);
        return 1.0 - p;
    }
    // continued fraction for Q(a,x)
    double b = x + 1.0 - a;
    double c = 1e300;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < 500; ++i) {
        double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < 1e-300) d = 1e-300;
        c = b + an / c;
        if (std::fabs(c) < 1e-300) c = 1e-300;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < 1e-14) break;
    }
    return std::exp(-x + a * std::log(x) - gln) * h;
}

// p-value of a chi-square statistic with `df` degrees of freedom.
inline double chi_square_p(double stat, double df) { return gamma_q(df / 2.0, stat / 2.0); }

// Chi-square goodness of fit of observed counts against expected proportions.
inline double chi_square_p_for_counts(const std::vector<std::uint64_t>& observed,
                                      const std::vector<double>& expected_proportion) {
    double total = 0;
    for (auto o : observed) total += static_cast<double>(o);
    double stat = 0;
    for (std::size_t i = 0; i < observed.size(); ++i) {
        double e = total * expected_proportion[i];
        double diff = static_cast<double>(observed[i]) - e;
        stat += diff * diff / e;
    }
    return chi_square_p(stat, static_cast<double>(observed.size() - 1));
}

}  // namespace oracle
