#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "remul/datasets.hpp"
#include "remul/error.hpp"
#include "remul/grpo.hpp"

using namespace remul;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<double> one_hot_logits(std::size_t k) {
    std::vector<double> l(TemplatePolicy::template_count(), -kInf);
    l[k] = 0.0;
    return l;
}

const SyntheticTask& task() {
    static const SyntheticTask t = make_synthetic_task(16, 0.5, 7);
    return t;
}

// Brute-force r_match for one trace: walk the three training prefixes and
// ask every listener directly, outside pool_execute.
int recount(const ListenerPool& pool, const QAItem& item, const ReasoningTrace& trace) {
    if (trace.n() == 0 || !trace.answer.parsed()) return 0;
    int count = 0;
    for (double f : kTrainingFractions) {
        const auto p = make_prefix(trace, f);
        for (std::size_t i = 0; i < pool.size(); ++i) {
            count += soft_execute(pool[i], item, p).answer == trace.answer;
        }
    }
    return count;
}

}  // namespace

TEST_CASE("rollout_group cardinality, determinism, degenerate distribution") {
    const TemplatePolicy only_first(one_hot_logits(0));
    const auto& item = task().items[0];
    const auto g = rollout_group(only_first, item, 5, 1);
    CHECK(g.size() == 5);
    CHECK(g.traces.size() == 5);
    for (const auto& r : g.rollouts) CHECK(r.actions == std::vector<int>{0});

    const TemplatePolicy uniform;
    const auto a = rollout_group(uniform, item, 5, 42);
    const auto b = rollout_group(uniform, item, 5, 42);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(a.rollouts[i].text == b.rollouts[i].text);
        CHECK(a.rollouts[i].old_logprobs == b.rollouts[i].old_logprobs);
    }
    CHECK_THROWS_AS(rollout_group(uniform, item, 1, 0), PreconditionError);
}

TEST_CASE("score_group bounds and brute-force recount") {
    const auto pool = scripted_pool(3);
    const auto& item = task().items[1];

    auto exec = rollout_group(TemplatePolicy(one_hot_logits(0)), item, 5, 3);
    score_group(exec, pool, RewardVariant::faithfulness_only, 0);
    for (double r : exec.rewards) CHECK(r == 9.0);

    auto correct = rollout_group(TemplatePolicy(one_hot_logits(0)), item, 5, 3);
    score_group(correct, pool, RewardVariant::correctness_only, 0);
    for (double r : correct.rewards) CHECK(r == 1.0);

    for (std::size_t k = 0; k < task().items.size(); ++k) {
        auto g = rollout_group(TemplatePolicy{}, task().items[k], 5, 11 + k);
        score_group(g, pool, RewardVariant::balanced, 0);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const int expect = g.degenerate[i] ? 0 : recount(pool, task().items[k], g.traces[i]);
            CHECK(g.records[i].r_match == expect);
            const bool ok = g.traces[i].answer == AnswerLabel{task().items[k].gold};
            CHECK(g.rewards[i] == doctest::Approx(g.degenerate[i] ? 0.0 : expect + 3.0 * ok));
            CHECK(g.records[i].lambda == 3);
        }
    }
}

TEST_CASE("parallel scoring matches serial") {
    const auto pool = scripted_pool(3);
    std::vector<GrpoGroup> a, b;
    for (std::size_t k = 0; k < task().items.size(); ++k) {
        a.push_back(rollout_group(TemplatePolicy{}, task().items[k], 5, k));
    }
    b = a;
    score_groups(a, pool, RewardVariant::balanced, 0, 5);
    score_groups_serial(b, pool, RewardVariant::balanced, 0, 5);
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k].rewards == b[k].rewards);
}

TEST_CASE("compute_advantages") {
    CHECK(compute_advantages(std::vector<double>{1, 1, 1, 1, 1}) == std::vector<double>(5, 0.0));
    const auto two = compute_advantages(std::vector<double>{0, 9}, 0.0);
    CHECK(two[0] == doctest::Approx(-1.0));
    CHECK(two[1] == doctest::Approx(1.0));
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<double> r(2 + rng() % 8);
        for (auto& v : r) v = static_cast<double>(rng() % 13);
        const auto a = compute_advantages(r, 0.0);
        const double mean = std::accumulate(a.begin(), a.end(), 0.0) / a.size();
        CHECK(std::abs(mean) < 1e-9);
        double var = 0;
        for (double v : a) var += v * v;
        var /= a.size();
        const bool constant = std::all_of(r.begin(), r.end(), [&](double v) { return v == r[0]; });
        if (constant) {
            CHECK(var == 0.0);
        } else {
            CHECK(std::abs(var - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("zero advantages leave parameters bit-identical without regularisers") {
    TemplatePolicy policy(std::vector<double>{0.3, -0.1, 0.2, 0.0, 0.5, -0.4, 0.1, 0.0});
    const auto before = std::vector<double>(policy.parameters().begin(), policy.parameters().end());
    const auto reference = policy.clone();
    auto g = rollout_group(policy, task().items[0], 5, 2);
    score_group(g, scripted_pool(3), RewardVariant::balanced, 0);
    g.advantages.assign(5, 0.0);
    GrpoConfig c;
    c.entropy_coef = 0;
    c.kl_coef = 0;
    c.learning_rate = 0.1;
    AdamW opt({c.learning_rate});
    std::vector<GrpoGroup> groups{g};
    grpo_step(policy, *reference, groups, c, opt);
    CHECK(std::vector<double>(policy.parameters().begin(), policy.parameters().end()) == before);
}

TEST_CASE("rewarded template gains probability") {
    TemplatePolicy policy;
    const auto reference = policy.clone();
    GrpoGroup g;
    g.item = task().items[0];
    for (int k : {0, 3}) {
        Rollout r;
        r.actions = {k};
        r.old_logprobs = {log_softmax(policy.decision_logits(r)[0])[k]};
        g.rollouts.push_back(r);
        g.traces.emplace_back();
        g.degenerate.push_back(0);
        g.records.emplace_back();
    }
    g.rewards = {1.0, -1.0};
    g.advantages = compute_advantages(g.rewards);
    GrpoConfig c;
    c.learning_rate = 0.01;
    AdamW opt({c.learning_rate});
    std::vector<GrpoGroup> groups{g};
    const double before = policy.parameters()[0];
    const double other = policy.parameters()[3];
    grpo_step(policy, *reference, groups, c, opt);
    CHECK(policy.parameters()[0] > before);
    CHECK(policy.parameters()[3] < other);
}

TEST_CASE("surrogate gradient matches finite differences") {
    TemplatePolicy sampler(std::vector<double>{0.2, -0.3, 0.1, 0.4, -0.2, 0.0, 0.3, -0.1});
    std::vector<GrpoGroup> groups;
    for (std::size_t k = 0; k < 4; ++k) {
        auto g = rollout_group(sampler, task().items[k], 5, 100 + k);
        score_group(g, scripted_pool(3), RewardVariant::balanced, 0);
        g.advantages = compute_advantages(g.rewards);
        groups.push_back(std::move(g));
    }
    // evaluate away from the sampling point, inside the clip window
    TemplatePolicy policy = sampler;
    Rng rng(6);
    for (auto& v : policy.parameters()) v += 0.05 * (uniform01(rng) - 0.5);
    const TemplatePolicy reference(std::vector<double>{0, 0, 0, 0, 0, 0, 0, 0.1});
    GrpoConfig c;
    c.kl_coef = 0.1;
    c.entropy_coef = 0.05;
    const auto lg = grpo_loss_and_grad(policy, reference, groups, c);
    for (std::size_t i = 0; i < policy.parameters().size(); ++i) {
        const double h = 1e-6, keep = policy.parameters()[i];
        policy.parameters()[i] = keep + h;
        const double up = grpo_loss_and_grad(policy, reference, groups, c).loss;
        policy.parameters()[i] = keep - h;
        const double dn = grpo_loss_and_grad(policy, reference, groups, c).loss;
        policy.parameters()[i] = keep;
        const double fd = (up - dn) / (2 * h);
        CHECK(std::abs(fd - lg.grad[i]) <= 1e-4 * std::max(std::abs(fd), 1e-3));
    }
}

TEST_CASE("non-finite loss names the group") {
    TemplatePolicy policy;
    auto g = rollout_group(policy, task().items[2], 5, 1);
    g.rewards.assign(5, 0.0);
    g.records.assign(5, RewardRecord{});
    g.advantages.assign(5, std::nan(""));
    GrpoConfig c;
    std::vector<GrpoGroup> groups{g};
    try {
        grpo_loss_and_grad(policy, policy, groups, c);
        FAIL("expected NonFiniteLoss");
    } catch (const NonFiniteLoss& e) {
        CHECK(std::string(e.what()).find(task().items[2].id) != std::string::npos);
    }
}

TEST_CASE("train: preconditions, curves, frozen reference") {
    TemplatePolicy policy;
    GrpoConfig c;
    c.learning_rate = 0.05;
    c.batch_items = 4;
    c.max_steps = 6;
    CHECK_THROWS_AS(train(policy, {}, scripted_pool(3), RewardVariant::balanced, c, 1), PreconditionError);
    GrpoConfig bad = c;
    bad.group_size = 1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    std::size_t seen = 0;
    const auto result =
        train(policy, task().items, scripted_pool(3), RewardVariant::balanced, c, 1, [&](const StepStats&) { ++seen; });
    CHECK(result.steps.size() == 6);
    CHECK(seen == 6);
    std::set<std::string> components;
    for (const auto& p : result.curve) components.insert(p.component);
    CHECK(components == std::set<std::string>{"r_match", "correct", "total"});

    // same seed, same result
    TemplatePolicy again;
    const auto repeat = train(again, task().items, scripted_pool(3), RewardVariant::balanced, c, 1);
    CHECK(std::vector<double>(again.parameters().begin(), again.parameters().end()) ==
          std::vector<double>(policy.parameters().begin(), policy.parameters().end()));
}

TEST_CASE("hint_optimized and correctness variants skip listeners") {
    TemplatePolicy policy;
    GrpoConfig c;
    c.learning_rate = 0.05;
    c.batch_items = 4;
    c.max_steps = 2;
    const ListenerPool empty;
    CHECK_NOTHROW(train(policy, task().items, empty, RewardVariant::hint_optimized, c, 3));
    CHECK_NOTHROW(train(policy, task().items, empty, RewardVariant::correctness_only, c, 3));
    CHECK_THROWS_AS(train(policy, task().items, empty, RewardVariant::faithfulness_only, c, 3), PreconditionError);
}
