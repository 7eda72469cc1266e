#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "tpt/corpus.hpp"
#include "tpt/thinkgen.hpp"

namespace tpt {

enum class GroupTag { domain, reasoning_intensity, target_audience };

inline const char* group_tag_name(GroupTag t) {
    switch (t) {
        case GroupTag::domain: return "domain";
        case GroupTag::reasoning_intensity: return "reasoning_intensity";
        case GroupTag::target_audience: return "target_audience";
    }
    return "domain";
}

struct GroupStat {
    std::string tag;
    std::string value;
    std::uint64_t count = 0;
    double mean_tokens = 0;
    std::uint64_t p50 = 0;
    std::uint64_t p90 = 0;
};

namespace detail {

// Nearest-rank percentile over a sorted vector: the smallest member such that
// at least q of the sample is <= it.
inline std::uint64_t nearest_rank(const std::vector<std::uint64_t>& sorted, double q) {
    std::size_t n = sorted.size();
    std::size_t rank = static_cast<std::size_t>(std::max<double>(1.0, std::ceil(q * static_cast<double>(n))));
    return sorted[std::min(rank, n) - 1];
}

}  // namespace detail

using MetaLookup = std::function<const MetadataTags*(const std::string& doc_id)>;

inline std::string tag_value_of(const MetadataTags& meta, GroupTag tag) {
    switch (tag) {
        case GroupTag::domain: return meta.domain.value_or("");
        case GroupTag::reasoning_intensity:
            return meta.reasoning_intensity ? intensity_name(*meta.reasoning_intensity) : "";
        case GroupTag::target_audience: return meta.target_audience.value_or("");
    }
    return "";
}

/// Trajectory-length statistics bucketed by one metadata tag. Trajectories
/// whose document lacks the tag (or is unknown to the lookup) are counted
/// under "untagged" so group counts always sum to the input size. Lengths
/// are the recorded token_count from generation, not a recount.
inline std::vector<GroupStat> group_lengths(const std::vector<ThinkingTrajectory>& trajs,
                                            const MetaLookup& lookup, GroupTag tag) {
    std::map<std::string, std::vector<std::uint64_t>> buckets;
    for (const auto& t : trajs) {
        std::string value;
        if (const MetadataTags* meta = lookup(t.doc_id)) value = tag_value_of(*meta, tag);
        if (value.empty()) value = "untagged";
        buckets[value].push_back(t.token_count);
    }
    std::vector<GroupStat> out;
    out.reserve(buckets.size());
    for (auto& [value, lengths] : buckets) {
        std::sort(lengths.begin(), lengths.end());
        std::uint64_t sum = 0;
        for (auto v : lengths) sum += v;
        GroupStat g;
        g.tag = group_tag_name(tag);
        g.value = value;
        g.count = lengths.size();
        g.mean_tokens = static_cast<double>(sum) / static_cast<double>(lengths.size());
        g.p50 = detail::nearest_rank(lengths, 0.50);
        g.p90 = detail::nearest_rank(lengths, 0.90);
        out.push_back(std::move(g));
    }
    return out;
}

/// The k groups with the longest mean trajectories, descending; equal means
/// order lexicographically by value. k past the end returns everything.
inline std::vector<GroupStat> top_k_domains(std::vector<GroupStat> stats, std::size_t k = 10) {
    std::sort(stats.begin(), stats.end(), [](const GroupStat& a, const GroupStat& b) {
        if (a.mean_tokens != b.mean_tokens) return a.mean_tokens > b.mean_tokens;
        return a.value < b.value;
    });
    if (stats.size() > k) stats.resize(k);
    return stats;
}

/// mean(advanced) / mean(none) over the reasoning-intensity grouping.
/// Absent when either group is missing.
inline std::optional<double> intensity_ratio(const std::vector<GroupStat>& stats) {
    const GroupStat* advanced = nullptr;
    const GroupStat* none = nullptr;
    for (const auto& g : stats) {
        if (g.value == "advanced") advanced = &g;
        if (g.value == "none") none = &g;
    }
    if (!advanced || !none || none->mean_tokens == 0) return std::nullopt;
    return advanced->mean_tokens / none->mean_tokens;
}

inline nlohmann::json analytics_report_json(const std::vector<std::vector<GroupStat>>& groupings,
                                            std::optional<double> ratio) {
    nlohmann::json j;
    j["groups"] = nlohmann::json::array();
    for (const auto& stats : groupings) {
        for (const auto& g : stats) {
            j["groups"].push_back({{"tag", g.tag},
                                   {"value", g.value},
                                   {"count", g.count},
                                   {"mean_tokens", g.mean_tokens},
                                   {"p50", g.p50},
                                   {"p90", g.p90}});
        }
    }
    if (ratio) {
        j["intensity_ratio"] = *ratio;
    } else {
        j["intensity_ratio"] = nullptr;
    }
    return j;
}

/// Text report: one aligned table per tag plus a bar chart of mean lengths
/// and a summary block with the intensity ratio.
inline std::string render_analytics_report(const std::vector<std::vector<GroupStat>>& groupings,
                                           std::optional<double> ratio) {
    std::ostringstream out;
    double max_mean = 0;
    for (const auto& stats : groupings) {
        for (const auto& g : stats) max_mean = std::max(max_mean, g.mean_tokens);
    }
    for (const auto& stats : groupings) {
        if (stats.empty()) continue;
        out << "== " << stats.front().tag << " ==\n";
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%-28s %8s %12s %8s %8s  %s\n", "value", "count", "mean", "p50",
                      "p90", "mean length");
        out << buf;
        for (const auto& g : stats) {
            int bar = max_mean > 0 ? static_cast<int>(g.mean_tokens / max_mean * 40.0 + 0.5) : 0;
            std::snprintf(buf, sizeof(buf), "%-28s %8llu %12.2f %8llu %8llu  ", g.value.c_str(),
                          static_cast<unsigned long long>(g.count), g.mean_tokens,
                          static_cast<unsigned long long>(g.p50), static_cast<unsigned long long>(g.p90));
            out << buf << std::string(static_cast<std::size_t>(bar), '#') << "\n";
        }
        out << "\n";
    }
    out << "== summary ==\n";
    if (ratio) {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "advanced/none mean thinking-length ratio: %.4f\n", *ratio);
        out << buf;
    } else {
        out << "advanced/none mean thinking-length ratio: unavailable (missing group)\n";
    }
    return out.str();
}

}  // namespace tpt
