#include <doctest.h>

#include <atomic>

#include "remul/datasets.hpp"
#include "remul/error.hpp"
#include "remul/listeners.hpp"
#include "remul/rng.hpp"

using namespace remul;

namespace {

QAItem item() {
    QAItem q;
    q.id = "t1";
    q.prompt = "Which is it?";
    q.options = {{"A", "red"}, {"B", "green"}, {"C", "blue"}, {"D", "black"}};
    q.gold = "C";
    return q;
}

TracePrefix prefix(std::vector<std::string> steps) {
    TracePrefix p;
    p.fraction = 0.5;
    p.m = steps.size();
    p.steps = std::move(steps);
    p.source_id = "t1";
    return p;
}

class Throwing final : public TextModel {
public:
    std::string name() const override { return "down"; }
    std::string generate(const GenerationRequest&) const override { throw TransportError("connection refused"); }
};

ListenerSpec spec_with(std::shared_ptr<const TextModel> model, std::string name) {
    ListenerSpec s;
    s.name = std::move(name);
    s.decoding = default_listener_decoding(0);
    s.model = std::move(model);
    return s;
}

}  // namespace

TEST_CASE("default decodings") {
    CHECK(default_listener_decoding(0).temperature == doctest::Approx(1.1));
    CHECK(default_listener_decoding(1).temperature == doctest::Approx(0.9));
    CHECK(default_listener_decoding(2).temperature == doctest::Approx(0.9));
    CHECK(default_listener_decoding(2).top_p == doctest::Approx(0.9));
    CHECK(default_listener_decoding(2).repetition_penalty == doctest::Approx(1.1));
}

TEST_CASE("scripted listener follows a directive") {
    const auto pool = scripted_pool(1);
    const auto v = soft_execute(pool[0], item(), prefix({"look at colours", "#exec:B"}));
    CHECK(v.answer.value() == "B");
    CHECK_FALSE(v.degraded);
    CHECK(v.listener == "listener-0");
    CHECK(v.fraction == 0.5);
}

TEST_CASE("scripted listener falls back to the hash oracle") {
    const auto pool = scripted_pool(3);
    const auto q = item();
    const std::vector<std::string> steps{"first thought", "second thought"};
    for (std::size_t i = 0; i < pool.size(); ++i) {
        const auto v = soft_execute(pool[i], q, prefix(steps));
        const std::string thinking = "first thought\nsecond thought";
        const auto h = stable_hash(pool[i].name + thinking);
        CHECK(v.answer.value() == q.options[h % q.options.size()].label);
    }
}

TEST_CASE("invalid directive label is ignored") {
    ScriptedListener l("x");
    const auto opts = item().options;
    CHECK(l.decide("#exec:Z\n#exec:A\n#exec:Q", opts).value() == "A");
}

TEST_CASE("transport failures degrade instead of throwing") {
    const auto spec = spec_with(std::make_shared<Throwing>(), "down");
    const auto v = soft_execute(spec, item(), prefix({"a"}));
    CHECK(v.degraded);
    CHECK_FALSE(v.answer.parsed());

    ListenerPool pool({spec});
    TruncationSet t;
    t.prefixes = {prefix({"a"}), prefix({"a", "b"})};
    const auto m = pool_execute(pool, item(), t);
    CHECK(m.size() == 2);
    for (const auto& c : m.cells()) CHECK(c.degraded);
}

TEST_CASE("listener request framing and blindness") {
    const auto pool = scripted_pool(1);
    const auto q = item();
    const auto req = listener_request(pool[0], q, prefix({"one", "two"}));
    CHECK(req.assistant_prefix == "<think>one\ntwo\n");
    CHECK(req.assistant_prefix.find("</think>") == std::string::npos);
    CHECK(req.user_text() == build_prompt(q));
    for (const auto& o : q.options) {
        CHECK(req.serialized().find(answer_sentence(o.label)) == std::string::npos);
    }
}

TEST_CASE("pool cardinality and cell order") {
    const auto q = item();
    ReasoningTrace t;
    t.steps = {"s1", "s2", "s3", "s4", "s5", "#exec:D"};
    for (const auto& [listeners, fracs] :
         std::vector<std::pair<std::size_t, std::vector<double>>>{{3, {0.25, 0.5, 0.75}}, {1, {0.2, 0.4, 0.6, 0.8, 1.0}}}) {
        const auto pool = scripted_pool(listeners);
        const auto tset = truncations_at(t, fracs);
        const auto m = pool_execute(pool, q, tset, 9);
        CHECK(m.size() == listeners * fracs.size());
        for (std::size_t i = 0; i < m.rows(); ++i) {
            for (std::size_t j = 0; j < m.cols(); ++j) {
                CHECK(m.at(i, j).listener == pool[i].name);
                CHECK(m.at(i, j).fraction == fracs[j]);
            }
        }
        if (fracs.back() == 1.0) CHECK(m.at(0, m.cols() - 1).answer.value() == "D");
    }
}

TEST_CASE("parallel matches serial and repeats") {
    const auto pool = scripted_pool(3);
    const auto task = make_synthetic_task(20, 0.5, 4);
    for (std::size_t k = 0; k < task.items.size(); ++k) {
        const auto trace = parse_trace(task.gold_traces[k], task.items[k].options);
        if (trace.n() == 0) continue;
        const auto tset = training_truncations(trace, task.items[k].id);
        const auto a = pool_execute(pool, task.items[k], tset, 3);
        const auto b = pool_execute(pool, task.items[k], tset, 3);
        const auto s = pool_execute_serial(pool, task.items[k], tset, 3);
        for (std::size_t c = 0; c < a.size(); ++c) {
            CHECK(a.cells()[c].completion == b.cells()[c].completion);
            CHECK(a.cells()[c].completion == s.cells()[c].completion);
            CHECK(a.cells()[c].answer == s.cells()[c].answer);
        }
    }
}

TEST_CASE("pool validation") {
    CHECK_THROWS_AS(ListenerPool(std::vector<ListenerSpec>{}), PreconditionError);
    auto m = std::make_shared<ScriptedListener>("a");
    CHECK_THROWS_AS(ListenerPool({spec_with(m, "a"), spec_with(m, "a")}), PreconditionError);
    auto bad = spec_with(m, "b");
    bad.decoding.temperature = 0;
    CHECK_THROWS_AS(ListenerPool({bad}), PreconditionError);
    CHECK_THROWS_AS(pool_execute(scripted_pool(1), item(), TruncationSet{}), PreconditionError);
    CHECK(listener_backend_from_string("local_toy") == ListenerBackend::local_toy);
    CHECK_THROWS_AS(listener_backend_from_string("grpc"), ConfigError);
}

TEST_CASE("options_in_prompt and prefix_thinking") {
    const auto opts = options_in_prompt("Q?\nOption A: one\nOption B: two\nOption long label: x\n");
    REQUIRE(opts.size() == 2);
    CHECK(opts[1].label == "B");
    CHECK(opts[1].text == "two");
    CHECK(prefix_thinking("<think>\nabc\n</think>Answer") == "abc");
    CHECK(prefix_thinking("<think>abc\n") == "abc");
}
