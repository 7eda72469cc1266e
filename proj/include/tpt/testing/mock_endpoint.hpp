#pragma once

// Instrumented chat-completions stand-in used by the test suites and the
// tpt-mock-server tool. Produces deterministic synthetic thinking text from
// a hash of the prompt, tracks peak request concurrency so tests can assert
// the client's in-flight bound, and can be scripted to fail, stall, or
// overrun token limits.

#include <atomic>
#include <cstdint>
#include <mutex>
#include <string>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "tpt/util.hpp"

namespace tpt::testing {

struct MockBehavior {
    int latency_ms = 0;
    int latency_jitter_ms = 0;      // deterministic per-request jitter from the prompt hash
    int fail_first_requests = 0;    // respond 500 to the first N requests
    int reject_429_first = 0;       // respond 429 to the first N requests
    std::size_t min_words = 40;
    std::size_t max_words = 220;
    bool append_stop_tag = true;    // emit "</think>" plus trailing text the client must strip
    std::size_t force_reply_bytes = 0;  // when set, reply with exactly this many 'x' bytes (no tag)
};

class MockEndpoint {
  public:
    explicit MockEndpoint(MockBehavior behavior = {}) : behavior_(behavior) {
        server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            handle(req, res);
        });
        server_.Get("/stats", [this](const httplib::Request&, httplib::Response& res) {
            nlohmann::json j;
            j["requests"] = requests_.load();
            j["max_concurrent"] = max_concurrent_.load();
            res.set_content(j.dump(), "application/json");
        });
        server_.Post("/reset", [this](const httplib::Request&, httplib::Response& res) {
            requests_ = 0;
            max_concurrent_ = 0;
            in_flight_ = 0;
            res.set_content("{}", "application/json");
        });
    }

    ~MockEndpoint() { stop(); }

    /// Binds on 127.0.0.1 (a free port when `port` is 0) and serves from a
    /// background thread.
    int start(int port = 0) {
        if (port == 0) {
            port_ = server_.bind_to_any_port("127.0.0.1");
        } else {
            if (!server_.bind_to_port("127.0.0.1", port)) {
                throw std::runtime_error("mock endpoint: cannot bind port " + std::to_string(port));
            }
            port_ = port;
        }
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
        return port_;
    }

    void stop() {
        request_stop();
        join();
    }

    /// Asks the server loop to exit without joining; safe from a signal
    /// handler while another thread sits in join().
    void request_stop() { server_.stop(); }

    /// Blocks until the serving thread exits (i.e. until stop()).
    void join() {
        if (thread_.joinable()) thread_.join();
    }

    int port() const { return port_; }
    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

    std::uint64_t requests() const { return requests_.load(); }
    std::uint64_t max_concurrent() const { return max_concurrent_.load(); }
    std::string last_authorization() const {
        std::lock_guard<std::mutex> lock(auth_mu_);
        return last_authorization_;
    }

    /// The exact completion text this server would produce for a prompt;
    /// tests use it to predict trajectories.
    static std::string completion_for(const std::string& prompt, const MockBehavior& b) {
        if (b.force_reply_bytes > 0) return std::string(b.force_reply_bytes, 'x');
        std::uint64_t h = hash_seed(prompt);
        SplitMix64 rng(h);
        static const char* kWords[] = {"the",     "structure", "follows",  "because",  "each",
                                       "term",    "depends",   "on",       "previous", "values",
                                       "so",      "we",        "can",      "derive",   "bounds",
                                       "check",   "this",      "step",     "holds",    "therefore",
                                       "result",  "matches",   "expected", "pattern",  "given",
                                       "context", "implies",   "relation", "between",  "quantities"};
        constexpr std::size_t kWordCount = sizeof(kWords) / sizeof(kWords[0]);
        std::size_t span = b.max_words > b.min_words ? b.max_words - b.min_words + 1 : 1;
        std::size_t n_words = b.min_words + static_cast<std::size_t>(rng.next_below(span));
        std::string text = "Okay, let me think about this carefully.";
        for (std::size_t i = 0; i < n_words; ++i) {
            text += ' ';
            text += kWords[rng.next_below(kWordCount)];
            if (i % 13 == 12) text += '.';
        }
        text += " So that is the core of it.";
        if (b.append_stop_tag) text += "</think> The summary restates the thinking above.";
        return text;
    }

  private:
    void handle(const httplib::Request& req, httplib::Response& res) {
        std::uint64_t seq = ++requests_;
        int now = ++in_flight_;
        int prev = max_concurrent_.load();
        while (now > prev && !max_concurrent_.compare_exchange_weak(prev, now)) {
        }

        {
            std::lock_guard<std::mutex> lock(auth_mu_);
            last_authorization_ = req.get_header_value("Authorization");
        }
        auto body = nlohmann::json::parse(req.body, nullptr, false);
        std::string prompt;
        if (!body.is_discarded() && body.contains("messages") && body.at("messages").is_array() &&
            !body.at("messages").empty()) {
            prompt = body.at("messages").at(0).value("content", "");
        }

        int delay = behavior_.latency_ms;
        if (behavior_.latency_jitter_ms > 0) {
            SplitMix64 rng(hash_seed(prompt) ^ 0x6a7e11ull);
            delay += static_cast<int>(rng.next_below(static_cast<std::uint64_t>(behavior_.latency_jitter_ms) + 1));
        }
        if (delay > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay));

        if (seq <= static_cast<std::uint64_t>(behavior_.reject_429_first)) {
            --in_flight_;
            res.status = 429;
            res.set_content("{\"error\":\"rate limited\"}", "application/json");
            return;
        }
        if (seq <= static_cast<std::uint64_t>(behavior_.reject_429_first + behavior_.fail_first_requests)) {
            --in_flight_;
            res.status = 500;
            res.set_content("{\"error\":\"synthetic failure\"}", "application/json");
            return;
        }

        std::string text = completion_for(prompt, behavior_);
        nlohmann::json out;
        out["choices"] = nlohmann::json::array(
            {nlohmann::json{{"message", {{"role", "assistant"}, {"content", text}}}, {"finish_reason", "stop"}}});
        out["model"] = body.is_discarded() ? "mock" : body.value("model", "mock");
        res.set_content(out.dump(), "application/json");
        --in_flight_;
    }

    MockBehavior behavior_;
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    std::atomic<std::uint64_t> requests_{0};
    std::atomic<int> in_flight_{0};
    std::atomic<int> max_concurrent_{0};
    mutable std::mutex auth_mu_;
    std::string last_authorization_;
};

}  // namespace tpt::testing
