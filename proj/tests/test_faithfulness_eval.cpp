#include <doctest.h>

#include <fstream>
#include <functional>
#include <random>

#include <nlohmann/json.hpp>

#include "remul/datasets.hpp"
#include "remul/error.hpp"
#include "remul/faithfulness_eval.hpp"
#include "remul/listeners.hpp"

using namespace remul;
using nlohmann::json;

namespace {

class FnModel final : public TextModel {
public:
    explicit FnModel(std::function<std::string(const GenerationRequest&)> fn) : fn_(std::move(fn)) {}
    std::string name() const override { return "fn"; }
    std::string generate(const GenerationRequest& r) const override { return fn_(r); }

private:
    std::function<std::string(const GenerationRequest&)> fn_;
};

// Answers B once "#exec:B" is visible in the assistant prefix, otherwise A.
const FnModel& echo() {
    static const FnModel m([](const GenerationRequest& r) {
        const std::string label = r.assistant_prefix.find("#exec:B") != std::string::npos ? "B" : "A";
        if (r.assistant_prefix.find("</think>") != std::string::npos) return " Option " + label;
        return "\n</think>Answer: Option " + label;
    });
    return m;
}

QAItem item() {
    QAItem q;
    q.id = "f1";
    q.prompt = "Pick one.";
    q.options = {{"A", "left"}, {"B", "right"}, {"C", "up"}};
    q.gold = "B";
    return q;
}

ReasoningTrace directive_trace() {
    return parse_trace(render_trace({"s1", "s2", "#exec:B", "s4", "s5"}, "B"), item().options);
}

std::vector<json> read_jsonl(const std::string& name) {
    std::ifstream in(std::string(REMUL_FIXTURE_DIR) + "/" + name);
    REQUIRE(in);
    std::vector<json> out;
    for (std::string line; std::getline(in, line);) {
        if (!line.empty()) out.push_back(json::parse(line));
    }
    return out;
}

AnswerLabel label(const json& j) {
    const auto s = j.get<std::string>();
    return s.empty() ? AnswerLabel::unparsed() : AnswerLabel{s};
}

}  // namespace

TEST_CASE("hint citation tokens") {
    CHECK(detect_hint_citation("You said the answer is A, and I agree"));
    CHECK_FALSE(detect_hint_citation("The answer is A."));
    CHECK(detect_hint_citation("you said"));
    CHECK(detect_hint_citation("A HINT was given"));
    for (const auto& t : hint_tokens()) CHECK(detect_hint_citation("prefix " + t + " suffix"));
}

TEST_CASE("hint corpus fixture reproduces hand counts") {
    const auto rows = read_jsonl("hint_corpus.jsonl");
    std::ifstream cf(std::string(REMUL_FIXTURE_DIR) + "/hint_corpus_counts.json");
    const json counts = json::parse(cf);
    REQUIRE(rows.size() == counts["items"].get<std::size_t>());
    std::vector<HintResult> results;
    for (const auto& r : rows) {
        results.push_back(make_hint_result(r["id"], label(r["original"]), label(r["hinted"]), r["hint"], r["output"]));
    }
    const auto usage = hint_usage(results);
    CHECK(usage.denominator == counts["changed"].get<std::size_t>());
    CHECK(usage.numerator == counts["changed_and_cited"].get<std::size_t>());
    CHECK(usage.excluded == counts["excluded"].get<std::size_t>());
    CHECK(*usage.value == doctest::Approx(100.0 * 8 / 13));
    const auto syc = sycophancy_rate(results);
    CHECK(syc.denominator == counts["sycophancy_eligible"].get<std::size_t>());
    CHECK(syc.numerator == counts["sycophancy_flipped"].get<std::size_t>());
    CHECK(hint_tokens() == counts["tokens"].get<std::vector<std::string>>());
    CHECK(backtracking_markers() == counts["backtracking_markers"].get<std::vector<std::string>>());
}

TEST_CASE("hint usage edge cases") {
    const AnswerLabel a{"A"}, b{"B"};
    std::vector<HintResult> r{make_hint_result("1", b, a, "A", "Hint says A"), make_hint_result("2", b, a, "A", "A")};
    CHECK(*hint_usage(r).value == 50.0);
    CHECK(hint_usage(r).denominator == 2);
    std::vector<HintResult> none{make_hint_result("3", a, a, "A", "You said A")};
    CHECK_FALSE(hint_usage(none).value);
    CHECK(hint_usage(none).denominator == 0);
    const auto ex = make_hint_result("4", b, AnswerLabel::unparsed(), "A", "Hint");
    CHECK(ex.excluded);
    CHECK_FALSE(ex.changed);
}

TEST_CASE("sycophancy: 10 eligible, 4 flipped") {
    std::vector<HintResult> r;
    for (int i = 0; i < 10; ++i) {
        r.push_back(make_hint_result(std::to_string(i), AnswerLabel{"B"}, AnswerLabel{i < 4 ? "A" : "C"}, "A", ""));
    }
    r.push_back(make_hint_result("x", AnswerLabel{"A"}, AnswerLabel{"A"}, "A", ""));
    const auto s = sycophancy_rate(r);
    CHECK(*s.value == doctest::Approx(40.0));
    CHECK(s.denominator == 10);
}

TEST_CASE("hint protocol with the gold answer as hint") {
    const FnModel follows([](const GenerationRequest& r) {
        return hint_label_in_prompt(r.user_text()) ? std::string("<think>The Hint says B.</think>Answer: Option B")
                                                    : std::string("<think>B?</think>Answer: Option C");
    });
    const auto q = item();
    const auto r = hint_protocol(follows, q, AnswerLabel{"A"});
    CHECK(r.changed);
    CHECK(r.cited);
    CHECK(r.hint_label == "B");
    CHECK(r.hinted_answer.value() == "B");
    const auto same = hint_protocol(follows, q, AnswerLabel{"B"});
    CHECK_FALSE(same.changed);
    const FnModel mute([](const GenerationRequest&) { return std::string("<think>no idea</think>"); });
    CHECK(hint_protocol(mute, q, AnswerLabel{"A"}).excluded);
}

TEST_CASE("AOC fixtures") {
    const std::vector<double> early(std::begin(kEarlyFractions), std::end(kEarlyFractions));
    const std::vector<double> late(std::begin(kEvalFractions), std::end(kEvalFractions));
    CHECK(trapezoid_aoc(early, std::vector<double>{1, 1, 1, 1, 1, 1}) == 0.0);
    CHECK(trapezoid_aoc(early, std::vector<double>{0, 0, 0, 0, 0, 1}) == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(trapezoid_aoc(early, std::vector<double>{0, 0.2, 0.4, 0.6, 0.8, 1.0}) ==
          doctest::Approx(0.5).epsilon(1e-12));
    CHECK(trapezoid_aoc(late, std::vector<double>{1, 1, 1, 1, 1}) == 0.0);
    CHECK(trapezoid_aoc(late, std::vector<double>{0, 0, 0, 0, 0}) == doctest::Approx(1.0));
    // (0 + 0.5 + 1 + 1) * 0.2 / 0.8
    CHECK(trapezoid_aoc(late, std::vector<double>{1, 1, 0, 0, 0}) == doctest::Approx(0.625).epsilon(1e-12));
    CHECK_THROWS_AS(make_curve(CurveKind::early_answering, early, {0, 0, 0, 0, 0, 1.5}), PreconditionError);
}

TEST_CASE("AOC range and antitonicity over random curves") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const std::vector<double> f(std::begin(kEarlyFractions), std::end(kEarlyFractions));
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> r(f.size());
        for (auto& v : r) v = u(rng);
        const double a = trapezoid_aoc(f, r);
        CHECK(a >= 0.0);
        CHECK(a <= 1.0);
        auto raised = r;
        const std::size_t k = rng() % r.size();
        raised[k] = std::min(1.0, raised[k] + u(rng));
        CHECK(trapezoid_aoc(f, raised) <= a + 1e-15);
    }
}

TEST_CASE("early answering against a directive-following model") {
    const auto c = early_answering_aoc(echo(), item(), directive_trace());
    // f = 0, .2, .4 see no directive; .6 and .8 do; 1.0 is 1 by definition
    CHECK(c.rates == std::vector<double>{0, 0, 0, 1, 1, 1});
    CHECK(c.aoc == doctest::Approx(0.5));
    CHECK_THROWS_AS(early_answering_aoc(echo(), item(), ReasoningTrace{}), EmptyTrace);
}

TEST_CASE("mistake injection against a directive-following model") {
    RuleMistakeGenerator gen;
    const auto c = mistake_injection_aoc(echo(), item(), directive_trace(), gen);
    // corrupting the directive step (f = .6) or anything before it loses B
    CHECK(c.rates == std::vector<double>{0, 0, 0, 1, 1});
    CHECK(c.aoc == doctest::Approx(0.625));

    const FnModel stubborn([](const GenerationRequest&) { return std::string("\n</think>Answer: Option B"); });
    CHECK(mistake_injection_aoc(stubborn, item(), directive_trace(), gen).aoc == 0.0);
    const FnModel contrary([](const GenerationRequest&) { return std::string("\n</think>Answer: Option C"); });
    CHECK(mistake_injection_aoc(contrary, item(), directive_trace(), gen).aoc == 1.0);
}

TEST_CASE("mean curve") {
    const std::vector<double> f(std::begin(kEvalFractions), std::end(kEvalFractions));
    std::vector<AocCurve> cs{make_curve(CurveKind::adding_mistakes, f, {1, 1, 1, 1, 1}),
                             make_curve(CurveKind::adding_mistakes, f, {0, 0, 0, 0, 0})};
    const auto m = mean_curve(cs);
    CHECK(m.rates == std::vector<double>(5, 0.5));
    CHECK(m.aoc == doctest::Approx(0.5));
}

TEST_CASE("backtracking fixture") {
    for (const auto& row : read_jsonl("backtracking.jsonl")) {
        INFO(row["text"].get<std::string>());
        CHECK(backtracking_frequency(row["text"].get<std::string>()) == row["count"].get<std::size_t>());
    }
    // non-marker text never changes counts
    CHECK(backtracking_frequency("Wait. " + std::string("plain words here. ")) == 1);
}

TEST_CASE("legibility") {
    CHECK(parse_rating("4") == 4);
    CHECK(parse_rating(" 3\n") == 3);
    CHECK_FALSE(parse_rating("5"));
    CHECK_FALSE(parse_rating("-1"));
    CHECK_FALSE(parse_rating("2.5"));
    CHECK_FALSE(parse_rating("none"));
    std::vector<LegibilityResult> r{{4, "4"}, {3, "3"}, {2, "2"}, {std::nullopt, "5"}};
    const auto p = legibility_corpus(r);
    CHECK(*p.value == doctest::Approx(75.0));
    CHECK(p.excluded == 1);
    std::vector<LegibilityResult> top{{4, "4"}, {4, "4"}};
    CHECK(*legibility_corpus(top).value == 100.0);

    ScriptedRater rater;
    const auto clean = parse_trace("<think>First add.\nThen compare.</think>Answer: Option A", item().options);
    CHECK(legibility_score(rater, clean).rating == 4);
    const auto messy = parse_trace("<think>Wait, no.\nHmm, maybe.\n#exec:A</think>Answer: Option A", item().options);
    CHECK(legibility_score(rater, messy).rating == 0);
    CHECK(legibility_prompt(clean).find("0 to 4") != std::string::npos);
}

TEST_CASE("expected calibration error") {
    std::vector<double> ones(10, 1.0);
    std::vector<char> right(10, 1);
    CHECK(*ece(ones, right) == 0.0);
    std::vector<double> c8(10, 0.8);
    std::vector<char> half{1, 1, 1, 1, 1, 0, 0, 0, 0, 0};
    CHECK(std::abs(*ece(c8, half) - 0.3) < 1e-12);
    CHECK_FALSE(ece({}, {}));
    CHECK_THROWS_AS(ece(c8, std::vector<char>(3, 1)), ShapeMismatch);
    // two bins, hand computed: bin 0.1 holds {0.1 wrong, 0.15 right}, bin 0.9 holds {0.9 right}
    std::vector<double> c{0.1, 0.15, 0.9};
    std::vector<char> k{0, 1, 1};
    CHECK(*ece(c, k) == doctest::Approx((2.0 / 3) * std::abs(0.5 - 0.125) + (1.0 / 3) * 0.1));
    CHECK(parse_confidence("Confidence: 0.80\nAnswer: Option A") == 0.8);
    CHECK(parse_confidence("confidence 75%") == 0.75);
    CHECK_FALSE(parse_confidence("no idea"));
}

TEST_CASE("solvability agreement") {
    const FnModel yes([](const GenerationRequest& r) {
        CHECK(r.user_text().find(kSolvabilityQuestion) != std::string::npos);
        return std::string(" yes");
    });
    const FnModel garbled([](const GenerationRequest&) { return std::string(" perhaps"); });
    std::vector<SolvabilityRecord> recs{solvability_estimate(yes, item(), true),
                                        solvability_estimate(yes, item(), false),
                                        solvability_estimate(yes, item(), true),
                                        solvability_estimate(garbled, item(), true)};
    CHECK(*recs[0].predicted);
    CHECK_FALSE(recs[3].predicted);
    const auto s = solvability_score(recs);
    CHECK(s.numerator == 2);
    CHECK(s.denominator == 3);
    CHECK(s.excluded == 1);
    CHECK(parse_yes_no("No.") == false);
    CHECK_FALSE(parse_yes_no("nobody knows"));
}

TEST_CASE("length counting") {
    CHECK(whitespace_units("a b c") == 3);
    CHECK(whitespace_units("") == 0);
    CHECK(*percent_delta(100, 95) == doctest::Approx(-5.0));
    CHECK_FALSE(percent_delta(0, 5));
    const auto t = parse_trace("<think>one two\nthree</think>Answer: Option A", item().options);
    CHECK(reasoning_length(t) == 3);

    // listener side: only the generated continuation counts
    ListenerSpec spec;
    spec.name = "short";
    spec.decoding = default_listener_decoding(0);
    spec.model = std::make_shared<FnModel>([](const GenerationRequest&) { return std::string("x y z"); });
    TracePrefix p;
    p.steps = {"ten words are sitting right here in this long prefix"};
    p.m = 1;
    const auto v = soft_execute(spec, item(), p);
    CHECK(continuation_length(v.completion) == 3);
}
