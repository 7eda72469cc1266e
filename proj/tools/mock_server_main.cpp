// Stand-in inference endpoint for local runs and demos: speaks just enough
// of the chat-completions protocol for the generate stage, with deterministic
// synthetic thinking text. See include/tpt/testing/mock_endpoint.hpp.

#include <csignal>
#include <cstdio>

#include "CLI11.hpp"
#include "tpt/testing/mock_endpoint.hpp"

namespace {
tpt::testing::MockEndpoint* g_endpoint = nullptr;

void handle_signal(int) {
    if (g_endpoint) g_endpoint->request_stop();
}
}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mock chat-completions endpoint"};
    int port = 8377;
    tpt::testing::MockBehavior behavior;
    app.add_option("--port", port, "port to listen on (0 = pick a free one)");
    app.add_option("--latency-ms", behavior.latency_ms, "fixed per-request latency");
    app.add_option("--jitter-ms", behavior.latency_jitter_ms, "deterministic per-request extra latency");
    app.add_option("--fail-first", behavior.fail_first_requests, "respond 500 to the first N requests");
    app.add_option("--reject-429-first", behavior.reject_429_first, "respond 429 to the first N requests");
    app.add_option("--min-words", behavior.min_words, "minimum words of thinking per reply");
    app.add_option("--max-words", behavior.max_words, "maximum words of thinking per reply");
    app.add_option("--force-reply-bytes", behavior.force_reply_bytes,
                   "reply with exactly this many bytes and no stop tag");
    CLI11_PARSE(app, argc, argv);

    tpt::testing::MockEndpoint endpoint(behavior);
    g_endpoint = &endpoint;
    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);

    int bound = endpoint.start(port);
    std::printf("listening on http://127.0.0.1:%d (POST /v1/chat/completions, GET /stats)\n", bound);
    std::fflush(stdout);
    // start() serves from a background thread; block until a signal stops it.
    endpoint.join();
    return 0;
}
