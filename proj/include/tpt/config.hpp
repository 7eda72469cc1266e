#pragma once

#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tpt/assemble.hpp"
#include "tpt/sftpack.hpp"
#include "tpt/thinkgen.hpp"
#include "tpt/tokenizer.hpp"
#include "tpt/util.hpp"

namespace tpt {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class RunMode { pretrain_abundant, pretrain_constrained, midtrain, sft };

inline const char* run_mode_name(RunMode m) {
    switch (m) {
        case RunMode::pretrain_abundant: return "pretrain-abundant";
        case RunMode::pretrain_constrained: return "pretrain-constrained";
        case RunMode::midtrain: return "midtrain";
        case RunMode::sft: return "sft";
    }
    return "pretrain-abundant";
}

inline RunMode run_mode_from_name(std::string_view s) {
    if (s == "pretrain-abundant") return RunMode::pretrain_abundant;
    if (s == "pretrain-constrained") return RunMode::pretrain_constrained;
    if (s == "midtrain") return RunMode::midtrain;
    if (s == "sft") return RunMode::sft;
    throw ConfigError("unknown mode: " + std::string(s));
}

struct SourceConfig {
    std::string source_id;
    std::string path;
    double weight = 1.0;
};

/// The whole run, declaratively. Everything except credentials lands in the
/// config hash recorded in the manifest; env vars TPT_ENDPOINT / TPT_API_KEY
/// override the endpoint and inject the credential.
struct RunConfig {
    RunMode mode = RunMode::pretrain_abundant;
    std::uint64_t seed = 0;
    std::string out_dir;
    TokenizerSpec generator_tokenizer;
    TokenizerSpec trainee_tokenizer;
    std::vector<SourceConfig> sources;
    GenerationConfig generation;

    // packing
    std::uint64_t seq_len = 8192;
    std::uint64_t shard_size = 1024;  // sequences per shard
    bool augment_samples = true;

    // mixture
    std::uint64_t token_budget = 0;
    double max_epochs_per_source = 0;  // 0 = derive from mode
    MixtureSpec::Weighting weighting = MixtureSpec::Weighting::sample_count;

    // sft
    std::string sft_input_path;
    std::uint64_t sft_seq_len = 32768;
    ChatTemplate chat_template;

    // evaluation-time sampling defaults; generation keeps its own (the two
    // stages use different top_p on purpose)
    double eval_temperature = 0.6;
    double eval_top_p = 0.95;

    double effective_max_epochs() const {
        if (max_epochs_per_source > 0) return max_epochs_per_source;
        return mode == RunMode::pretrain_constrained ? 4.0 : 1.0;
    }

    static RunConfig load(const std::filesystem::path& path) {
        nlohmann::json j = nlohmann::json::parse(read_file(path), nullptr, false);
        if (j.is_discarded()) throw ConfigError("config is not valid JSON: " + path.string());
        try {
            return from_json(j);
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            throw ConfigError(std::string("bad config: ") + e.what());
        }
    }

    static RunConfig from_json(const nlohmann::json& j) {
        RunConfig c;
        c.mode = run_mode_from_name(j.value("mode", "pretrain-abundant"));
        c.seed = j.value("seed", std::uint64_t{0});
        c.out_dir = j.value("out_dir", "");
        if (j.contains("tokenizer")) {
            const auto& t = j.at("tokenizer");
            if (t.contains("generator")) c.generator_tokenizer = TokenizerSpec::from_json(t.at("generator"));
            if (t.contains("trainee")) c.trainee_tokenizer = TokenizerSpec::from_json(t.at("trainee"));
        }
        for (const auto& s : j.value("sources", nlohmann::json::array())) {
            SourceConfig src;
            src.source_id = s.at("source_id").get<std::string>();
            src.path = s.at("path").get<std::string>();
            src.weight = s.value("weight", 1.0);
            c.sources.push_back(std::move(src));
        }
        if (j.contains("generation")) {
            const auto& g = j.at("generation");
            c.generation.temperature = g.value("temperature", c.generation.temperature);
            c.generation.top_p = g.value("top_p", c.generation.top_p);
            c.generation.max_thinking_tokens = g.value("max_thinking_tokens", c.generation.max_thinking_tokens);
            c.generation.end_of_thinking_tag = g.value("end_of_thinking_tag", c.generation.end_of_thinking_tag);
            if (g.contains("stop_sequences")) {
                c.generation.stop_sequences = g.at("stop_sequences").get<std::vector<std::string>>();
            }
            c.generation.model_id = g.value("model_id", c.generation.model_id);
            c.generation.endpoint_url = g.value("endpoint_url", c.generation.endpoint_url);
            c.generation.max_in_flight = g.value("max_in_flight", c.generation.max_in_flight);
            if (g.contains("retry")) {
                const auto& r = g.at("retry");
                c.generation.retry.max_attempts = r.value("max_attempts", c.generation.retry.max_attempts);
                c.generation.retry.initial_backoff =
                    std::chrono::milliseconds(r.value("backoff_initial_ms", std::int64_t{1000}));
                c.generation.retry.multiplier = r.value("backoff_multiplier", 2.0);
            }
            if (g.contains("template")) {
                c.generation.template_id = template_from_name(g.at("template").get<std::string>());
            }
            c.generation.input_max_tokens = g.value("input_max_tokens", c.generation.input_max_tokens);
        }
        if (j.contains("packing")) {
            const auto& p = j.at("packing");
            c.seq_len = p.value("seq_len", c.seq_len);
            c.shard_size = p.value("shard_size", c.shard_size);
            c.augment_samples = p.value("augment", c.augment_samples);
        }
        if (j.contains("mixture")) {
            const auto& m = j.at("mixture");
            c.token_budget = m.value("token_budget", c.token_budget);
            c.max_epochs_per_source = m.value("max_epochs_per_source", c.max_epochs_per_source);
            std::string w = m.value("weighting", "sample");
            if (w == "sample") {
                c.weighting = MixtureSpec::Weighting::sample_count;
            } else if (w == "token") {
                c.weighting = MixtureSpec::Weighting::token_count;
            } else {
                throw ConfigError("mixture.weighting must be 'sample' or 'token'");
            }
        }
        if (j.contains("sft")) {
            const auto& s = j.at("sft");
            c.sft_input_path = s.value("path", "");
            c.sft_seq_len = s.value("seq_len", c.sft_seq_len);
            if (s.contains("chat_template")) c.chat_template = ChatTemplate::from_json(s.at("chat_template"));
        }
        if (j.contains("eval")) {
            c.eval_temperature = j.at("eval").value("temperature", c.eval_temperature);
            c.eval_top_p = j.at("eval").value("top_p", c.eval_top_p);
        }
        c.apply_env_overrides();
        return c;
    }

    void apply_env_overrides() {
        if (const char* ep = std::getenv("TPT_ENDPOINT"); ep && *ep) generation.endpoint_url = ep;
        if (const char* key = std::getenv("TPT_API_KEY"); key && *key) generation.api_key = key;
    }

    void validate() const {
        if (out_dir.empty()) throw ConfigError("out_dir is required");
        if (seq_len == 0) throw ConfigError("packing.seq_len must be > 0");
        if (shard_size == 0) throw ConfigError("packing.shard_size must be > 0");
        for (const auto& s : sources) {
            if (s.source_id.empty()) throw ConfigError("every source needs a source_id");
            if (s.path.empty()) throw ConfigError("source '" + s.source_id + "' needs a path");
            if (!(s.weight > 0)) throw ConfigError("source '" + s.source_id + "' weight must be > 0");
        }
        try {
            generation.validate();
        } catch (const std::exception& e) {
            throw ConfigError(e.what());
        }
        if (!(eval_temperature > 0) || !(eval_top_p > 0 && eval_top_p <= 1)) {
            throw ConfigError("eval sampling parameters out of range");
        }
    }

    /// Canonical form for hashing: everything that shapes the outputs, minus
    /// credentials and the output location.
    nlohmann::json to_canonical_json() const {
        nlohmann::json j;
        j["mode"] = run_mode_name(mode);
        j["seed"] = seed;
        j["tokenizer"]["generator"] = generator_tokenizer.to_json();
        j["tokenizer"]["trainee"] = trainee_tokenizer.to_json();
        j["sources"] = nlohmann::json::array();
        for (const auto& s : sources) {
            j["sources"].push_back({{"source_id", s.source_id}, {"path", s.path}, {"weight", s.weight}});
        }
        j["generation"] = {{"temperature", generation.temperature},
                           {"top_p", generation.top_p},
                           {"max_thinking_tokens", generation.max_thinking_tokens},
                           {"end_of_thinking_tag", generation.end_of_thinking_tag},
                           {"stop_sequences", generation.effective_stops()},
                           {"model_id", generation.model_id},
                           {"template", template_name(generation.template_id)},
                           {"input_max_tokens", generation.input_max_tokens}};
        j["packing"] = {{"seq_len", seq_len}, {"shard_size", shard_size}, {"augment", augment_samples}};
        j["mixture"] = {{"token_budget", token_budget},
                        {"max_epochs_per_source", effective_max_epochs()},
                        {"weighting", weighting == MixtureSpec::Weighting::sample_count ? "sample" : "token"}};
        j["sft"] = {{"seq_len", sft_seq_len}, {"chat_template", chat_template.to_json()}};
        j["eval"] = {{"temperature", eval_temperature}, {"top_p", eval_top_p}};
        return j;
    }

    std::string config_hash() const { return sha256_hex(to_canonical_json().dump()); }
};

}  // namespace tpt
