// Pipeline driver: ingest -> generate -> pack (or sft-pack), plus analyze and
// score. Stages talk to each other only through files under the output
// directory, every writing stage is idempotent given (config, seed, cache),
// and each run leaves a machine-readable report behind.
//
//   out/
//     corpus/<source>.jsonl    canonical deduplicated documents
//     traj/<source>.jsonl      thinking trajectories, aligned with corpus order
//     cache/                   content-addressed generation cache
//     shards/                  packed token shards + manifest.json
//     sft_shards/              packed SFT shards (+ .mask planes) + manifest.json
//     reports/<stage>.json     run report per stage

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <fcntl.h>
#include <unistd.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "tpt/analytics.hpp"
#include "tpt/assemble.hpp"
#include "tpt/config.hpp"
#include "tpt/corpus.hpp"
#include "tpt/evalscore.hpp"
#include "tpt/sftpack.hpp"
#include "tpt/shards.hpp"
#include "tpt/thinkgen.hpp"
#include "tpt/tokenizer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitStageFailure = 1;
constexpr int kExitConfigError = 2;

// One pipeline instance per output directory.
class DirLock {
  public:
    explicit DirLock(const fs::path& out_dir) : path_(out_dir / ".lock") {
        fs::create_directories(out_dir);
        fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd_ < 0) {
            throw std::runtime_error("output directory is locked by another run (remove " + path_.string() +
                                     " if that run is dead)");
        }
        std::string pid = std::to_string(::getpid()) + "\n";
        [[maybe_unused]] auto n = ::write(fd_, pid.data(), pid.size());
    }
    ~DirLock() {
        if (fd_ >= 0) {
            ::close(fd_);
            std::error_code ec;
            fs::remove(path_, ec);
        }
    }

  private:
    fs::path path_;
    int fd_ = -1;
};

// Present while a stage runs; an aborted stage leaves it behind as the
// partial-output marker.
class PartialMarker {
  public:
    PartialMarker(const fs::path& out_dir, const std::string& stage)
        : path_(out_dir / (".partial-" + stage)) {
        fs::create_directories(out_dir);
        std::ofstream f(path_);
    }
    void complete() {
        std::error_code ec;
        fs::remove(path_, ec);
        done_ = true;
    }
    ~PartialMarker() = default;

  private:
    fs::path path_;
    bool done_ = false;
};

void write_report(const fs::path& out_dir, const std::string& stage, json report) {
    fs::create_directories(out_dir / "reports");
    report["stage"] = stage;
    tpt::write_file_atomic(out_dir / "reports" / (stage + ".json"), report.dump(2) + "\n");
}

std::vector<tpt::Document> read_canonical_docs(const fs::path& path, const tpt::Tokenizer& trainee,
                                               const std::string& source_id) {
    tpt::DocumentReader reader(path, trainee, tpt::IngestOptions{source_id});
    std::vector<tpt::Document> docs;
    while (auto d = reader.next()) docs.push_back(std::move(*d));
    if (reader.stats().malformed_skipped > 0) {
        throw std::runtime_error("canonical corpus file is corrupt: " + path.string());
    }
    return docs;
}

std::vector<tpt::ThinkingTrajectory> read_trajectories(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open trajectory file: " + path.string());
    std::vector<tpt::ThinkingTrajectory> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(tpt::trajectory_from_json(json::parse(line)));
    }
    return out;
}

int cmd_ingest(const tpt::RunConfig& cfg) {
    fs::path out(cfg.out_dir);
    PartialMarker marker(out, "ingest");
    auto t0 = std::chrono::steady_clock::now();

    tpt::Tokenizer trainee = tpt::Tokenizer::load(cfg.trainee_tokenizer);
    fs::create_directories(out / "corpus");
    tpt::ExactDeduper dedup;  // one seen-set across all sources ("dataset level")
    json per_source = json::object();
    std::uint64_t total_docs = 0;
    std::uint64_t total_tokens = 0;
    std::uint64_t total_malformed = 0;

    for (const auto& src : cfg.sources) {
        tpt::DocumentReader reader(src.path, trainee, tpt::IngestOptions{src.source_id});
        std::ofstream sink(out / "corpus" / (src.source_id + ".jsonl"), std::ios::binary | std::ios::trunc);
        if (!sink) throw std::runtime_error("cannot write corpus output for " + src.source_id);
        std::uint64_t kept = 0;
        std::uint64_t tokens = 0;
        std::uint64_t dropped_before = dedup.dropped();
        while (auto doc = reader.next()) {
            if (!dedup.first_occurrence(doc->text)) continue;
            sink << tpt::document_to_json(*doc).dump() << "\n";
            ++kept;
            tokens += doc->token_count;
        }
        if (!sink) throw std::runtime_error("write failed for corpus output of " + src.source_id);
        per_source[src.source_id] = {{"records_read", reader.stats().records_read},
                                     {"documents_kept", kept},
                                     {"malformed_skipped", reader.stats().malformed_skipped},
                                     {"duplicates_dropped", dedup.dropped() - dropped_before},
                                     {"tokens", tokens}};
        total_docs += kept;
        total_tokens += tokens;
        total_malformed += reader.stats().malformed_skipped;
        std::fprintf(stderr, "[ingest] %s: %llu docs kept, %llu tokens\n", src.source_id.c_str(),
                     static_cast<unsigned long long>(kept), static_cast<unsigned long long>(tokens));
    }

    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_report(out, "ingest",
                 json{{"sources", per_source},
                      {"documents", total_docs},
                      {"tokens", total_tokens},
                      {"malformed_skipped", total_malformed},
                      {"duplicates_dropped", dedup.dropped()},
                      {"dedup_order", "before-generation"},
                      {"dedup_scope", "across-all-sources"},
                      {"seconds", secs}});
    marker.complete();
    return kExitOk;
}

int cmd_generate(const tpt::RunConfig& cfg) {
    fs::path out(cfg.out_dir);
    PartialMarker marker(out, "generate");
    auto t0 = std::chrono::steady_clock::now();

    if (cfg.generation.endpoint_url.empty()) {
        throw tpt::ConfigError("generation.endpoint_url (or TPT_ENDPOINT) is required for generate");
    }
    tpt::Tokenizer trainee = tpt::Tokenizer::load(cfg.trainee_tokenizer);
    tpt::Tokenizer generator = tpt::Tokenizer::load(cfg.generator_tokenizer);
    tpt::TrajectoryCache cache(out / "cache");
    tpt::PromptTemplate tpl = tpt::PromptTemplate::get(cfg.generation.template_id);
    fs::create_directories(out / "traj");

    json per_source = json::object();
    std::uint64_t thinking_tokens = 0;
    std::uint64_t errors = 0;
    std::uint64_t requests = 0;
    std::uint64_t cache_hits = 0;
    std::uint64_t retries = 0;

    for (const auto& src : cfg.sources) {
        auto docs = read_canonical_docs(out / "corpus" / (src.source_id + ".jsonl"), trainee, src.source_id);
        std::ofstream sink(out / "traj" / (src.source_id + ".jsonl"), std::ios::binary | std::ios::trunc);
        if (!sink) throw std::runtime_error("cannot write trajectory output for " + src.source_id);
        auto stats = tpt::batch_generate(docs, tpl, cfg.generation, cache, generator, cfg.seed,
                                         [&](const tpt::ThinkingTrajectory& traj) {
                                             sink << tpt::trajectory_to_json(traj).dump() << "\n";
                                         });
        if (!sink) throw std::runtime_error("write failed for trajectory output of " + src.source_id);
        per_source[src.source_id] = {{"documents", stats.documents},
                                     {"requests", stats.requests},
                                     {"cache_hits", stats.cache_hits},
                                     {"retries", stats.retries},
                                     {"errors", stats.errors},
                                     {"thinking_tokens", stats.generated_tokens},
                                     {"docs_per_second", stats.wall_seconds > 0
                                                             ? static_cast<double>(stats.documents) / stats.wall_seconds
                                                             : 0.0}};
        thinking_tokens += stats.generated_tokens;
        errors += stats.errors;
        requests += stats.requests;
        cache_hits += stats.cache_hits;
        retries += stats.retries;
        std::fprintf(stderr, "[generate] %s: %llu docs, %llu requests, %llu cache hits, %llu errors\n",
                     src.source_id.c_str(), static_cast<unsigned long long>(stats.documents),
                     static_cast<unsigned long long>(stats.requests),
                     static_cast<unsigned long long>(stats.cache_hits),
                     static_cast<unsigned long long>(stats.errors));
    }

    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_report(out, "generate",
                 json{{"sources", per_source},
                      {"thinking_tokens", thinking_tokens},
                      {"requests", requests},
                      {"cache_hits", cache_hits},
                      {"retries", retries},
                      {"errors", errors},
                      {"seconds", secs}});
    marker.complete();
    return kExitOk;
}

// Zips the canonical corpus with its trajectory file, yielding augmented
// samples in corpus order. Both files were written in the same order, so the
// join is positional, verified by doc_id.
tpt::SampleStream open_source_stream(const fs::path& out, const std::string& source_id,
                                     const tpt::Tokenizer& trainee, bool augmented) {
    auto docs = std::make_shared<tpt::DocumentReader>(out / "corpus" / (source_id + ".jsonl"), trainee,
                                                      tpt::IngestOptions{source_id});
    std::shared_ptr<std::ifstream> traj;
    if (augmented) {
        traj = std::make_shared<std::ifstream>(out / "traj" / (source_id + ".jsonl"));
        if (!*traj) {
            throw std::runtime_error("missing trajectory file for source '" + source_id +
                                     "' (run generate first or set packing.augment=false)");
        }
    }
    return [docs, traj, &trainee, source_id]() -> std::optional<tpt::AugmentedSample> {
        auto doc = docs->next();
        if (!doc) return std::nullopt;
        if (!traj) return tpt::make_unaugmented(*doc, trainee);
        std::string line;
        if (!std::getline(*traj, line)) {
            throw std::runtime_error("trajectory file for '" + source_id + "' is shorter than the corpus");
        }
        auto t = tpt::trajectory_from_json(json::parse(line));
        return tpt::augment(*doc, t, trainee);
    };
}

int cmd_pack(const tpt::RunConfig& cfg) {
    fs::path out(cfg.out_dir);
    PartialMarker marker(out, "pack");
    auto t0 = std::chrono::steady_clock::now();

    tpt::Tokenizer trainee = tpt::Tokenizer::load(cfg.trainee_tokenizer);
    if (cfg.token_budget == 0) throw tpt::ConfigError("mixture.token_budget is required for pack");

    tpt::MixtureSpec mix_spec;
    mix_spec.token_budget = cfg.token_budget;
    mix_spec.seed = cfg.seed;
    mix_spec.max_epochs_per_source = cfg.effective_max_epochs();
    mix_spec.weighting = cfg.weighting;

    std::vector<tpt::MixSource> sources;
    for (const auto& src : cfg.sources) {
        mix_spec.sources.push_back({src.source_id, src.weight});
        tpt::MixSource ms;
        ms.source_id = src.source_id;
        // Size the source: sample count always; exact token mass only when the
        // token weighting mode needs it.
        bool need_tokens = cfg.weighting == tpt::MixtureSpec::Weighting::token_count;
        auto stream = open_source_stream(out, src.source_id, trainee, cfg.augment_samples);
        while (auto s = stream()) {
            ms.sample_count += 1;
            if (need_tokens) ms.token_count += s->tokens.size();
        }
        ms.open = [&out, source_id = src.source_id, &trainee, augmented = cfg.augment_samples]() {
            return open_source_stream(out, source_id, trainee, augmented);
        };
        sources.push_back(std::move(ms));
    }

    fs::path shards_dir = out / "shards";
    tpt::ShardWriter writer(shards_dir, cfg.shard_size, cfg.seq_len, false);
    tpt::SequencePacker packer(cfg.seq_len, trainee.specials().pad,
                               [&](tpt::PackedSequence seq) { writer.add(seq); });
    std::uint64_t raw_doc_tokens = 0;
    tpt::MixStats mix_stats = tpt::mix(std::move(sources), mix_spec, [&](tpt::AugmentedSample s) {
        raw_doc_tokens += s.doc_span.size();
        packer.add(s);
    });
    packer.finish();
    const tpt::PackStats& pack_stats = packer.stats();

    tpt::Manifest manifest = writer.finish();
    manifest.config_hash = cfg.config_hash();
    manifest.tokenizer_hash = trainee.spec_hash();
    manifest.seed = cfg.seed;
    manifest.total_samples = mix_stats.total_samples;
    manifest.samples_per_source = mix_stats.samples_per_source;
    manifest.tokens_per_source = mix_stats.tokens_per_source;
    manifest.save(shards_dir / "manifest.json");

    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_report(out, "pack",
                 json{{"samples", pack_stats.samples_in},
                      {"tokens_in", pack_stats.tokens_in},
                      {"raw_doc_tokens", raw_doc_tokens},
                      {"augmentation_ratio",
                       raw_doc_tokens > 0
                           ? static_cast<double>(pack_stats.tokens_in) / static_cast<double>(raw_doc_tokens)
                           : 0.0},
                      {"sequences", pack_stats.sequences_out},
                      {"non_pad_tokens", pack_stats.non_pad_tokens},
                      {"pad_tokens", pack_stats.pad_tokens},
                      {"shards", manifest.shards.size()},
                      {"per_source_samples", mix_stats.samples_per_source},
                      {"per_source_tokens", mix_stats.tokens_per_source},
                      {"warnings", mix_stats.warnings},
                      {"manifest_hash", manifest.content_hash()},
                      {"tokens_per_second",
                       secs > 0 ? static_cast<double>(pack_stats.tokens_in) / secs : 0.0},
                      {"seconds", secs}});
    std::fprintf(stderr, "[pack] %llu samples -> %llu sequences (%llu shards), %llu non-pad tokens\n",
                 static_cast<unsigned long long>(pack_stats.samples_in),
                 static_cast<unsigned long long>(pack_stats.sequences_out),
                 static_cast<unsigned long long>(manifest.shards.size()),
                 static_cast<unsigned long long>(pack_stats.non_pad_tokens));
    marker.complete();
    return kExitOk;
}

int cmd_sft_pack(const tpt::RunConfig& cfg) {
    fs::path out(cfg.out_dir);
    PartialMarker marker(out, "sft-pack");
    auto t0 = std::chrono::steady_clock::now();

    if (cfg.sft_input_path.empty()) throw tpt::ConfigError("sft.path is required for sft-pack");
    tpt::Tokenizer trainee = tpt::Tokenizer::load(cfg.trainee_tokenizer);

    std::ifstream in(cfg.sft_input_path);
    if (!in) throw std::runtime_error("cannot open sft input: " + cfg.sft_input_path);

    fs::path shards_dir = out / "sft_shards";
    tpt::ShardWriter writer(shards_dir, cfg.shard_size, cfg.sft_seq_len, true);
    tpt::SFTPacker packer(cfg.sft_seq_len, trainee.specials().pad,
                          [&](tpt::PackedSFTSequence seq) { tpt::write_sft_sequence(writer, seq); });

    std::uint64_t malformed = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = json::parse(line, nullptr, false);
        std::optional<tpt::ChatExample> ex;
        if (!j.is_discarded()) ex = tpt::chat_example_from_json(j);
        if (!ex) {
            ++malformed;
            continue;
        }
        auto rendered = tpt::render_chat(*ex, cfg.chat_template, trainee);
        if (!rendered) {
            ++malformed;
            continue;
        }
        packer.add(std::move(*rendered));
    }
    packer.finish();
    const tpt::SFTPackStats& stats = packer.stats();

    tpt::Manifest manifest = writer.finish();
    manifest.config_hash = cfg.config_hash();
    manifest.tokenizer_hash = trainee.spec_hash();
    manifest.seed = cfg.seed;
    manifest.total_samples = stats.examples_in - stats.rejected;
    manifest.masked_in_tokens = stats.masked_in_tokens;
    manifest.save(shards_dir / "manifest.json");

    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_report(out, "sft-pack",
                 json{{"examples", stats.examples_in},
                      {"malformed_skipped", malformed},
                      {"rejected", stats.rejected},
                      {"truncated", stats.truncated},
                      {"sequences", stats.sequences_out},
                      {"non_pad_tokens", stats.non_pad_tokens},
                      {"pad_tokens", stats.pad_tokens},
                      {"masked_in_tokens", stats.masked_in_tokens},
                      {"manifest_hash", manifest.content_hash()},
                      {"seconds", secs}});
    std::fprintf(stderr, "[sft-pack] %llu examples -> %llu sequences, %llu masked-in tokens\n",
                 static_cast<unsigned long long>(stats.examples_in),
                 static_cast<unsigned long long>(stats.sequences_out),
                 static_cast<unsigned long long>(stats.masked_in_tokens));
    marker.complete();
    return kExitOk;
}

int cmd_analyze(const tpt::RunConfig& cfg) {
    fs::path out(cfg.out_dir);
    PartialMarker marker(out, "analyze");
    auto t0 = std::chrono::steady_clock::now();

    tpt::Tokenizer trainee = tpt::Tokenizer::load(cfg.trainee_tokenizer);
    std::map<std::string, tpt::MetadataTags> meta;
    std::vector<tpt::ThinkingTrajectory> trajs;
    for (const auto& src : cfg.sources) {
        for (auto& d : read_canonical_docs(out / "corpus" / (src.source_id + ".jsonl"), trainee, src.source_id)) {
            meta.emplace(d.doc_id, d.meta);
        }
        auto t = read_trajectories(out / "traj" / (src.source_id + ".jsonl"));
        trajs.insert(trajs.end(), std::make_move_iterator(t.begin()), std::make_move_iterator(t.end()));
    }
    tpt::MetaLookup lookup = [&](const std::string& doc_id) -> const tpt::MetadataTags* {
        auto it = meta.find(doc_id);
        return it == meta.end() ? nullptr : &it->second;
    };

    auto domains = tpt::group_lengths(trajs, lookup, tpt::GroupTag::domain);
    auto intensity = tpt::group_lengths(trajs, lookup, tpt::GroupTag::reasoning_intensity);
    auto audience = tpt::group_lengths(trajs, lookup, tpt::GroupTag::target_audience);
    auto ratio = tpt::intensity_ratio(intensity);
    auto top_domains = tpt::top_k_domains(domains, 10);

    std::string text = tpt::render_analytics_report({top_domains, intensity, audience}, ratio);
    std::cout << text;
    fs::create_directories(out / "reports");
    tpt::write_file_atomic(out / "reports" / "analytics.txt", text);

    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    json report = tpt::analytics_report_json({domains, intensity, audience}, ratio);
    report["trajectories"] = trajs.size();
    report["seconds"] = secs;
    write_report(out, "analyze", report);
    marker.complete();
    return kExitOk;
}

int cmd_score(const std::string& input, const std::string& report_path, std::optional<double> min_pass) {
    std::ifstream in(input);
    if (!in) throw std::runtime_error("cannot open eval input: " + input);
    std::vector<tpt::EvalRecord> records;
    std::uint64_t malformed = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = json::parse(line, nullptr, false);
        std::optional<tpt::EvalRecord> rec;
        if (!j.is_discarded()) rec = tpt::eval_record_from_json(j);
        if (!rec) {
            ++malformed;
            continue;
        }
        records.push_back(std::move(*rec));
    }

    tpt::ScoreReport report = tpt::pass_at_1(records);
    std::cout << tpt::render_score_report(report);
    if (malformed > 0) std::fprintf(stderr, "[score] skipped %llu malformed records\n",
                                    static_cast<unsigned long long>(malformed));
    if (!report_path.empty()) {
        json j = report.to_json();
        j["malformed_skipped"] = malformed;
        tpt::write_file_atomic(report_path, j.dump(2) + "\n");
    }
    if (min_pass && report.pass_at_1 < *min_pass) {
        std::fprintf(stderr, "[score] pass@1 %.4f below required floor %.4f\n", report.pass_at_1, *min_pass);
        return kExitStageFailure;
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"thinking-augmented pre-training data pipeline"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand

    std::string config_path;
    std::string out_override;
    std::optional<std::uint64_t> seed_override;
    app.add_option("--config", config_path, "path to the run config (JSON)");
    app.add_option("--seed", seed_override, "override the config seed");
    app.add_option("--out", out_override, "override the config output directory");

    auto* ingest = app.add_subcommand("ingest", "read, tag, and deduplicate the source corpora");
    auto* generate = app.add_subcommand("generate", "generate thinking trajectories via the endpoint");
    auto* pack = app.add_subcommand("pack", "mix, pack, and shard augmented samples");
    auto* sft_pack = app.add_subcommand("sft-pack", "pack chat examples with assistant-only loss masks");
    auto* analyze = app.add_subcommand("analyze", "trajectory-length statistics by metadata tag");
    auto* score = app.add_subcommand("score", "score model outputs (averaged pass@1)");

    std::string score_input;
    std::string score_report;
    std::optional<double> min_pass;
    score->add_option("--input", score_input, "eval records (JSONL)")->required();
    score->add_option("--report", score_report, "write the machine-readable report here");
    score->add_option("--min-pass", min_pass, "exit nonzero when pass@1 falls below this floor");

    CLI11_PARSE(app, argc, argv);

    try {
        if (score->parsed()) {
            return cmd_score(score_input, score_report, min_pass);
        }
        if (config_path.empty()) throw tpt::ConfigError("--config is required");
        tpt::RunConfig cfg = tpt::RunConfig::load(config_path);
        if (seed_override) cfg.seed = *seed_override;
        if (!out_override.empty()) cfg.out_dir = out_override;
        cfg.validate();

        DirLock lock{fs::path(cfg.out_dir)};
        if (analyze->parsed()) return cmd_analyze(cfg);
        if (ingest->parsed()) return cmd_ingest(cfg);
        if (generate->parsed()) return cmd_generate(cfg);
        if (pack->parsed()) return cmd_pack(cfg);
        if (sft_pack->parsed()) return cmd_sft_pack(cfg);
        throw tpt::ConfigError("no subcommand given");
    } catch (const tpt::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfigError;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitStageFailure;
    }
}
