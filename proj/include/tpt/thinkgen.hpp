#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "tpt/corpus.hpp"
#include "tpt/prompts.hpp"
#include "tpt/tokenizer.hpp"
#include "tpt/util.hpp"

namespace tpt {

enum class FinishReason { stop_tag, length, error };

inline const char* finish_reason_name(FinishReason r) {
    switch (r) {
        case FinishReason::stop_tag: return "stop_tag";
        case FinishReason::length: return "length";
        case FinishReason::error: return "error";
    }
    return "error";
}

inline FinishReason finish_reason_from_name(std::string_view s) {
    if (s == "stop_tag") return FinishReason::stop_tag;
    if (s == "length") return FinishReason::length;
    if (s == "error") return FinishReason::error;
    throw std::invalid_argument("unknown finish reason: " + std::string(s));
}

struct RetryPolicy {
    int max_attempts = 4;
    std::chrono::milliseconds initial_backoff{1000};
    double multiplier = 2.0;
};

struct GenerationConfig {
    double temperature = 0.6;
    double top_p = 0.9;
    std::size_t max_thinking_tokens = 8192;
    std::string end_of_thinking_tag = "</think>";
    std::vector<std::string> stop_sequences;  // defaults to {end_of_thinking_tag}
    std::string model_id = "default-model";
    std::string endpoint_url;                 // e.g. http://127.0.0.1:8080
    std::string api_key;
    std::size_t max_in_flight = 8;
    RetryPolicy retry;
    TemplateId template_id = TemplateId::default_prompt;
    std::size_t input_max_tokens = 2048;

    std::vector<std::string> effective_stops() const {
        std::vector<std::string> stops = stop_sequences;
        if (!end_of_thinking_tag.empty() &&
            std::find(stops.begin(), stops.end(), end_of_thinking_tag) == stops.end()) {
            stops.push_back(end_of_thinking_tag);
        }
        return stops;
    }

    void validate() const {
        if (!(temperature > 0)) throw std::invalid_argument("generation: temperature must be > 0");
        if (!(top_p > 0 && top_p <= 1)) throw std::invalid_argument("generation: top_p must be in (0, 1]");
        if (max_thinking_tokens == 0) throw std::invalid_argument("generation: max_thinking_tokens must be > 0");
        if (max_in_flight == 0) throw std::invalid_argument("generation: max_in_flight must be >= 1");
        if (retry.max_attempts < 1) throw std::invalid_argument("generation: retry.max_attempts must be >= 1");
    }
};

struct ThinkingTrajectory {
    std::string doc_id;
    std::string text;                 // never contains the end-of-thinking tag
    std::uint64_t token_count = 0;    // generator tokenizer; <= max_thinking_tokens
    TemplateId template_id = TemplateId::default_prompt;
    std::string model_id;
    FinishReason finish_reason = FinishReason::error;
};

inline nlohmann::json trajectory_to_json(const ThinkingTrajectory& t) {
    nlohmann::json j;
    j["doc_id"] = t.doc_id;
    j["text"] = t.text;
    j["token_count"] = t.token_count;
    j["template_id"] = template_name(t.template_id);
    j["model_id"] = t.model_id;
    j["finish_reason"] = finish_reason_name(t.finish_reason);
    return j;
}

inline ThinkingTrajectory trajectory_from_json(const nlohmann::json& j) {
    ThinkingTrajectory t;
    t.doc_id = j.at("doc_id").get<std::string>();
    t.text = j.at("text").get<std::string>();
    t.token_count = j.at("token_count").get<std::uint64_t>();
    t.template_id = template_from_name(j.at("template_id").get<std::string>());
    t.model_id = j.at("model_id").get<std::string>();
    t.finish_reason = finish_reason_from_name(j.at("finish_reason").get<std::string>());
    return t;
}

/// Disk cache of finished trajectories, keyed by the identity of the request.
/// A cache hit must never regenerate, so the key covers exactly the fields
/// that change the completion: doc, template, model, and sampling settings.
/// Failed generations are not cached; a resumed run retries them.
class TrajectoryCache {
  public:
    explicit TrajectoryCache(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_);
    }

    static std::string key_for(std::string_view doc_id, TemplateId tpl, const GenerationConfig& cfg) {
        std::string material;
        material += doc_id;
        material += '\x1f';
        material += template_name(tpl);
        material += '\x1f';
        material += cfg.model_id;
        material += '\x1f';
        material += format_double(cfg.temperature);
        material += '\x1f';
        material += format_double(cfg.top_p);
        material += '\x1f';
        material += std::to_string(cfg.max_thinking_tokens);
        for (const auto& s : cfg.effective_stops()) {
            material += '\x1f';
            material += s;
        }
        return sha256_hex(material);
    }

    std::optional<ThinkingTrajectory> get(const std::string& key) const {
        auto path = path_for(key);
        std::ifstream in(path, std::ios::binary);
        if (!in) {
            ++misses_;
            return std::nullopt;
        }
        std::string contents((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        auto j = nlohmann::json::parse(contents, nullptr, false);
        if (j.is_discarded()) {
            ++misses_;
            return std::nullopt;
        }
        ++hits_;
        return trajectory_from_json(j);
    }

    void put(const std::string& key, const ThinkingTrajectory& traj) {
        auto path = path_for(key);
        std::lock_guard<std::mutex> lock(write_mu_);
        std::filesystem::create_directories(path.parent_path());
        write_file_atomic(path, trajectory_to_json(traj).dump());
        ++writes_;
    }

    std::uint64_t hits() const { return hits_; }
    std::uint64_t misses() const { return misses_; }
    std::uint64_t writes() const { return writes_; }

  private:
    std::filesystem::path path_for(const std::string& key) const {
        return dir_ / key.substr(0, 2) / (key + ".json");
    }

    std::filesystem::path dir_;
    std::mutex write_mu_;
    mutable std::atomic<std::uint64_t> hits_{0};
    mutable std::atomic<std::uint64_t> misses_{0};
    std::atomic<std::uint64_t> writes_{0};
};

struct CompletionResult {
    bool ok = false;
    std::string text;
    std::string finish_reason;  // as reported by the server
    int status = 0;
    std::string error;
    int retries = 0;
};

namespace detail {

struct EndpointParts {
    std::string base;  // scheme://host:port
    std::string path;
};

inline EndpointParts split_endpoint_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw std::invalid_argument("endpoint_url must include a scheme: " + url);
    }
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/v1/chat/completions"};
    std::string path = url.substr(path_start);
    if (path == "/") path = "/v1/chat/completions";
    return {url.substr(0, path_start), path};
}

}  // namespace detail

/// One connection to a chat-completions style endpoint. Not thread safe;
/// batch_generate owns one client per worker.
class EndpointClient {
  public:
    explicit EndpointClient(const GenerationConfig& cfg)
        : cfg_(cfg), parts_(detail::split_endpoint_url(cfg.endpoint_url)), http_(parts_.base) {
        http_.set_connection_timeout(10, 0);
        http_.set_read_timeout(300, 0);
    }

    CompletionResult complete(const std::string& prompt) {
        nlohmann::json req;
        req["model"] = cfg_.model_id;
        req["messages"] = nlohmann::json::array({nlohmann::json{{"role", "user"}, {"content", prompt}}});
        req["temperature"] = cfg_.temperature;
        req["top_p"] = cfg_.top_p;
        req["max_tokens"] = cfg_.max_thinking_tokens;
        req["stop"] = cfg_.effective_stops();
        std::string body = req.dump();

        httplib::Headers headers;
        if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);

        CompletionResult out;
        auto backoff = cfg_.retry.initial_backoff;
        for (int attempt = 1; attempt <= cfg_.retry.max_attempts; ++attempt) {
            auto res = http_.Post(parts_.path, headers, body, "application/json");
            if (res) {
                out.status = res->status;
                if (res->status >= 200 && res->status < 300) {
                    return parse_response(res->body, out);
                }
                bool retryable = res->status == 429 || res->status >= 500;
                if (!retryable) {
                    out.error = "http status " + std::to_string(res->status);
                    return out;
                }
                out.error = "http status " + std::to_string(res->status);
            } else {
                out.error = "transport error: " + httplib::to_string(res.error());
            }
            if (attempt < cfg_.retry.max_attempts) {
                std::this_thread::sleep_for(backoff);
                backoff = std::chrono::milliseconds(
                    static_cast<long long>(static_cast<double>(backoff.count()) * cfg_.retry.multiplier));
                ++out.retries;
            }
        }
        return out;
    }

  private:
    static CompletionResult parse_response(const std::string& body, CompletionResult out) {
        auto j = nlohmann::json::parse(body, nullptr, false);
        if (j.is_discarded() || !j.contains("choices") || !j.at("choices").is_array() ||
            j.at("choices").empty()) {
            out.error = "malformed completion response";
            return out;
        }
        const auto& choice = j.at("choices").at(0);
        if (!choice.contains("message") || !choice.at("message").contains("content")) {
            out.error = "completion response missing message content";
            return out;
        }
        out.text = choice.at("message").at("content").get<std::string>();
        out.finish_reason = choice.value("finish_reason", "stop");
        out.ok = true;
        return out;
    }

    GenerationConfig cfg_;
    detail::EndpointParts parts_;
    httplib::Client http_;
};

/// Turns a raw completion into a trajectory honoring the two hard limits:
/// the text is cut at the first stop sequence (so no end-of-thinking tag ever
/// survives), then capped to max_thinking_tokens under the generator tokenizer.
inline ThinkingTrajectory finalize_completion(const std::string& doc_id, const CompletionResult& res,
                                              const GenerationConfig& cfg, const Tokenizer& generator) {
    ThinkingTrajectory traj;
    traj.doc_id = doc_id;
    traj.template_id = cfg.template_id;
    traj.model_id = cfg.model_id;
    if (!res.ok) {
        traj.finish_reason = FinishReason::error;
        return traj;
    }
    std::string text = res.text;
    bool saw_stop = false;
    std::size_t cut = std::string::npos;
    for (const auto& stop : cfg.effective_stops()) {
        if (stop.empty()) continue;
        auto pos = text.find(stop);
        if (pos != std::string::npos && pos < cut) {
            cut = pos;
            saw_stop = true;
        }
    }
    if (saw_stop) text.resize(cut);

    std::uint64_t count = generator.token_count(text);
    if (count > cfg.max_thinking_tokens) {
        text = generator.truncate_to(text, cfg.max_thinking_tokens);
        count = generator.token_count(text);
        traj.finish_reason = FinishReason::length;
    } else if (saw_stop) {
        traj.finish_reason = FinishReason::stop_tag;
    } else {
        traj.finish_reason = res.finish_reason == "length" ? FinishReason::length : FinishReason::stop_tag;
    }
    traj.text = std::move(text);
    traj.token_count = count;
    return traj;
}

/// Single-document generation: cache hit short-circuits, otherwise one
/// completion request (with retries) through `client`. A failed request
/// yields finish_reason=error with empty text; the document is kept and
/// assembled unaugmented downstream.
inline ThinkingTrajectory generate(const Document& doc, const PromptTemplate& tpl,
                                   const GenerationConfig& cfg, TrajectoryCache& cache,
                                   const Tokenizer& generator, std::uint64_t seed,
                                   EndpointClient* client = nullptr) {
    std::string key = TrajectoryCache::key_for(doc.doc_id, tpl.id, cfg);
    if (auto cached = cache.get(key)) return *cached;

    std::string prompt = render_prompt(doc, tpl, seed, generator, cfg.input_max_tokens);
    std::unique_ptr<EndpointClient> owned;
    if (!client) {
        owned = std::make_unique<EndpointClient>(cfg);
        client = owned.get();
    }
    CompletionResult res = client->complete(prompt);
    ThinkingTrajectory traj = finalize_completion(doc.doc_id, res, cfg, generator);
    if (traj.finish_reason != FinishReason::error) cache.put(key, traj);
    return traj;
}

struct BatchStats {
    std::uint64_t documents = 0;
    std::uint64_t cache_hits = 0;
    std::uint64_t requests = 0;
    std::uint64_t retries = 0;
    std::uint64_t errors = 0;
    std::uint64_t generated_tokens = 0;
    double wall_seconds = 0;
};

/// Corpus-scale generation. At most cfg.max_in_flight requests are ever
/// outstanding (one per worker), and trajectories are emitted strictly in
/// input document order no matter what order completions land in. Per-
/// document failures are isolated; the batch never aborts on one error.
inline BatchStats batch_generate(const std::vector<Document>& docs, const PromptTemplate& tpl,
                                 const GenerationConfig& cfg, TrajectoryCache& cache,
                                 const Tokenizer& generator, std::uint64_t seed,
                                 const std::function<void(const ThinkingTrajectory&)>& emit) {
    cfg.validate();
    BatchStats stats;
    stats.documents = docs.size();
    if (docs.empty()) return stats;

    auto t0 = std::chrono::steady_clock::now();
    std::uint64_t hits0 = cache.hits();

    std::mutex mu;
    std::condition_variable cv;
    std::size_t next_dispatch = 0;
    std::size_t next_emit = 0;
    std::map<std::size_t, ThinkingTrajectory> pending;
    // Keeps the reorder buffer bounded when one document stalls behind a
    // slow request.
    const std::size_t window = std::max<std::size_t>(cfg.max_in_flight * 8, 64);

    std::atomic<std::uint64_t> requests{0};
    std::atomic<std::uint64_t> retries{0};
    std::atomic<std::uint64_t> errors{0};
    std::atomic<std::uint64_t> generated_tokens{0};

    std::size_t n_workers = std::min(cfg.max_in_flight, docs.size());
    std::vector<std::thread> workers;
    workers.reserve(n_workers);
    for (std::size_t w = 0; w < n_workers; ++w) {
        workers.emplace_back([&]() {
            EndpointClient client(cfg);
            for (;;) {
                std::size_t idx;
                {
                    std::unique_lock<std::mutex> lock(mu);
                    cv.wait(lock, [&] {
                        return next_dispatch >= docs.size() || next_dispatch < next_emit + window;
                    });
                    if (next_dispatch >= docs.size()) return;
                    idx = next_dispatch++;
                }
                const Document& doc = docs[idx];
                ThinkingTrajectory traj;
                std::string key = TrajectoryCache::key_for(doc.doc_id, tpl.id, cfg);
                if (auto cached = cache.get(key)) {
                    traj = *cached;
                } else {
                    std::string prompt = render_prompt(doc, tpl, seed, generator, cfg.input_max_tokens);
                    CompletionResult res = client.complete(prompt);
                    requests += 1;
                    retries += static_cast<std::uint64_t>(res.retries);
                    traj = finalize_completion(doc.doc_id, res, cfg, generator);
                    if (traj.finish_reason != FinishReason::error) cache.put(key, traj);
                }
                if (traj.finish_reason == FinishReason::error) errors += 1;
                generated_tokens += traj.token_count;
                {
                    std::lock_guard<std::mutex> lock(mu);
                    pending.emplace(idx, std::move(traj));
                    while (!pending.empty() && pending.begin()->first == next_emit) {
                        emit(pending.begin()->second);
                        pending.erase(pending.begin());
                        ++next_emit;
                    }
                    cv.notify_all();
                }
            }
        });
    }
    for (auto& w : workers) w.join();

    stats.cache_hits = cache.hits() - hits0;
    stats.requests = requests;
    stats.retries = retries;
    stats.errors = errors;
    stats.generated_tokens = generated_tokens;
    stats.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return stats;
}

}  // namespace tpt
