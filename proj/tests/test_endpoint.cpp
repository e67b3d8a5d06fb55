#include <doctest.h>

#include <atomic>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "remul/endpoint.hpp"
#include "remul/error.hpp"
#include "remul/listeners.hpp"

using namespace remul;
using nlohmann::json;

namespace {

// Local chat-completion server; replies with a fixed continuation and keeps
// the last request body.
struct FakeServer {
    httplib::Server server;
    std::thread thread;
    int port = 0;
    std::string last_body;
    std::atomic<int> calls{0};
    int fail_first = 0;

    FakeServer() {
        server.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            const int n = ++calls;
            if (n <= fail_first) {
                res.status = 503;
                return;
            }
            last_body = req.body;
            res.set_content(json{{"choices", {{{"message", {{"content", "ok.\n</think>Answer: Option C"}}}}}}}.dump(),
                            "application/json");
        });
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~FakeServer() {
        server.stop();
        thread.join();
    }
    std::string url() const { return "http://127.0.0.1:" + std::to_string(port); }
};

QAItem item() {
    QAItem q;
    q.id = "e";
    q.prompt = "Pick.";
    q.options = {{"A", "x"}, {"B", "y"}, {"C", "z"}};
    q.gold = "A";
    return q;
}

}  // namespace

TEST_CASE("request body carries the assistant prefix and decoding") {
    GenerationRequest r;
    r.messages = {{"system", "s"}, {"user", "u"}};
    r.assistant_prefix = "<think>a\n";
    r.decoding.temperature = 0.9;
    r.seed = 7;
    const json body = json::parse(chat_completion_body(r, "m"));
    CHECK(body["model"] == "m");
    CHECK(body["messages"].size() == 3);
    CHECK(body["messages"][2]["role"] == "assistant");
    CHECK(body["messages"][2]["content"] == "<think>a\n");
    CHECK(body["continue_final_message"] == true);
    CHECK(body["temperature"].get<double>() == doctest::Approx(0.9));
    CHECK(body["seed"] == 7);
}

TEST_CASE("response parsing") {
    CHECK(chat_completion_text(R"({"choices":[{"message":{"content":"hi"}}]})") == "hi");
    CHECK(chat_completion_text(R"({"choices":[{"text":"raw"}]})") == "raw");
    CHECK_THROWS_AS(chat_completion_text("{}"), TransportError);
    CHECK_THROWS_AS(chat_completion_text("not json"), TransportError);
}

TEST_CASE("soft execution through a local endpoint") {
    FakeServer server;
    EndpointConfig cfg;
    cfg.base_url = server.url();
    cfg.model = "toy";
    cfg.timeout_seconds = 5;
    ListenerSpec spec;
    spec.name = "remote";
    spec.backend = ListenerBackend::endpoint;
    spec.decoding = default_listener_decoding(1);
    spec.model = std::make_shared<EndpointModel>(cfg);
    TracePrefix p;
    p.steps = {"step"};
    p.m = 1;
    const auto v = soft_execute(spec, item(), p, 1);
    CHECK_FALSE(v.degraded);
    CHECK(v.answer.value() == "C");
    const json sent = json::parse(server.last_body);
    CHECK(sent["messages"].back()["content"] == "<think>step\n");
}

TEST_CASE("retries absorb transient server errors") {
    FakeServer server;
    server.fail_first = 2;
    EndpointConfig cfg;
    cfg.base_url = server.url();
    cfg.retries = 2;
    cfg.timeout_seconds = 5;
    EndpointModel model(cfg);
    GenerationRequest r;
    r.messages = {{"user", "u"}};
    CHECK(model.generate(r).find("Option C") != std::string::npos);
    CHECK(server.calls == 3);
}

TEST_CASE("connection refused becomes a degraded verdict") {
    int port = 0;
    {
        httplib::Server probe;
        port = probe.bind_to_any_port("127.0.0.1");
    }  // closed again; nothing listens there now
    EndpointConfig cfg;
    cfg.base_url = "http://127.0.0.1:" + std::to_string(port);
    cfg.retries = 1;
    cfg.timeout_seconds = 1;
    auto model = std::make_shared<EndpointModel>(cfg, "gone");
    GenerationRequest r;
    CHECK_THROWS_AS(model->generate(r), TransportError);

    ListenerSpec spec;
    spec.name = "gone";
    spec.backend = ListenerBackend::endpoint;
    spec.decoding = default_listener_decoding(0);
    spec.model = model;
    TracePrefix p;
    p.steps = {"x"};
    p.m = 1;
    const auto v = soft_execute(spec, item(), p);
    CHECK(v.degraded);
    CHECK(v.answer.str() == "UNPARSED");
}
