// Parallel kernels against their serial references.
#include <benchmark/benchmark.h>

#include "remul/answer_sft.hpp"
#include "remul/datasets.hpp"
#include "remul/grpo.hpp"
#include "remul/listeners.hpp"

using namespace remul;

namespace {

struct PoolFixture {
    ListenerPool pool = scripted_pool(8);
    QAItem item;
    TruncationSet tset;
    PoolFixture() {
        const auto task = make_synthetic_task(1, 1.0, 1);
        item = task.items[0];
        ReasoningTrace t;
        for (int i = 0; i < 400; ++i) t.steps.push_back("step " + std::to_string(i) + " carries some words along");
        t.steps.push_back("#exec:" + item.gold);
        tset = eval_truncations(t, item.id);
    }
};

void BM_pool_execute(benchmark::State& state) {
    static const PoolFixture f;
    for (auto _ : state) benchmark::DoNotOptimize(pool_execute(f.pool, f.item, f.tset, 1));
}
void BM_pool_execute_serial(benchmark::State& state) {
    static const PoolFixture f;
    for (auto _ : state) benchmark::DoNotOptimize(pool_execute_serial(f.pool, f.item, f.tset, 1));
}

std::vector<GrpoGroup> make_groups(std::size_t n) {
    const auto task = make_synthetic_task(n, 0.5, 2);
    std::vector<GrpoGroup> groups;
    for (std::size_t k = 0; k < n; ++k) groups.push_back(rollout_group(TemplatePolicy{}, task.items[k], 5, k));
    return groups;
}

void BM_score_groups(benchmark::State& state) {
    static const auto pool = scripted_pool(3);
    const auto base = make_groups(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) {
        auto groups = base;
        score_groups(groups, pool, RewardVariant::balanced, 0, 3);
        benchmark::DoNotOptimize(groups);
    }
}
void BM_score_groups_serial(benchmark::State& state) {
    static const auto pool = scripted_pool(3);
    const auto base = make_groups(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) {
        auto groups = base;
        score_groups_serial(groups, pool, RewardVariant::balanced, 0, 3);
        benchmark::DoNotOptimize(groups);
    }
}

struct LossFixture {
    TinyLM model;
    MaskedBatch batch;
    LossFixture() {
        const auto tok = Tokenizer::synthetic();
        TinyLMConfig c;
        c.vocab = static_cast<int>(tok.size());
        c.d_model = 32;
        TinyLMPolicy policy(TinyLM(c, 1), tok, 24);
        model = policy.model();
        batch = to_batch(build_sft_examples(policy, make_synthetic_task(64, 0.5, 3).items, 4));
    }
};

void BM_masked_nll(benchmark::State& state) {
    static const LossFixture f;
    const TinyLMLogits m(f.model);
    for (auto _ : state) benchmark::DoNotOptimize(masked_nll(m, f.batch));
}
void BM_masked_nll_serial(benchmark::State& state) {
    static const LossFixture f;
    const TinyLMLogits m(f.model);
    for (auto _ : state) benchmark::DoNotOptimize(masked_nll_serial(m, f.batch));
}

}  // namespace

BENCHMARK(BM_pool_execute)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_pool_execute_serial)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_score_groups)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_score_groups_serial)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_masked_nll)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_masked_nll_serial)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
