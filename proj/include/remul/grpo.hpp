#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "remul/listeners.hpp"
#include "remul/optimizer.hpp"
#include "remul/policy.hpp"
#include "remul/rewards.hpp"
#include "remul/trace.hpp"

namespace remul {

struct GrpoConfig {
    double learning_rate = 1e-6;
    std::size_t batch_items = 64;
    double entropy_coef = 0.001;
    double kl_coef = 0.001;
    std::size_t group_size = 5;
    int epochs = 3;
    double advantage_epsilon = 1e-8;
    double clip_range = 0.2;
    int lambda = 0;              // 0: use the pool size
    std::size_t max_steps = 0;   // 0: no cap
    SplitMode split_mode = SplitMode::newline;

    void validate() const;  // throws ConfigError
};

struct GrpoGroup {
    QAItem item;
    std::vector<Rollout> rollouts;
    std::vector<ReasoningTrace> traces;
    std::vector<char> degenerate;  // no steps, malformed output, or exhausted budget
    std::vector<RewardRecord> records;
    std::vector<double> rewards;
    std::vector<double> advantages;
    bool hinted = false;
    AnswerLabel unhinted_answer;  // hint_optimized only

    std::size_t size() const noexcept { return rollouts.size(); }
};

// G independent samples for the item prompt. hint_optimized groups sample the
// hinted prompt and also record one unhinted reference answer.
GrpoGroup rollout_group(const Policy& policy, const QAItem& item, std::size_t group_size, std::uint64_t seed,
                        bool hinted = false, SplitMode mode = SplitMode::newline);

void score_group(GrpoGroup& group, const ListenerPool& pool, RewardVariant variant, int lambda,
                 std::uint64_t seed = 0);
// Parallel over groups; the serial variant is the reference.
void score_groups(std::span<GrpoGroup> groups, const ListenerPool& pool, RewardVariant variant, int lambda,
                  std::uint64_t seed = 0);
void score_groups_serial(std::span<GrpoGroup> groups, const ListenerPool& pool, RewardVariant variant, int lambda,
                         std::uint64_t seed = 0);

// (r - mean) / (population std + eps); all zeros for a constant group.
std::vector<double> compute_advantages(std::span<const double> rewards, double eps = 1e-8);

struct LossAndGrad {
    double loss = 0.0;
    std::vector<double> grad;
    double kl = 0.0;       // mean per-decision divergence estimate
    double entropy = 0.0;  // mean per-decision entropy
};

// Token-mean clipped surrogate with divergence and entropy terms, averaged
// over every non-degenerate rollout in `groups`. Throws NonFiniteLoss naming
// the offending group.
LossAndGrad grpo_loss_and_grad(const Policy& policy, const Policy& reference, std::span<const GrpoGroup> groups,
                               const GrpoConfig& config);

struct StepStats {
    std::size_t step = 0;
    double mean_reward = 0.0;
    double mean_abs_advantage = 0.0;
    double kl = 0.0;
    double entropy = 0.0;
    double loss = 0.0;
    double mean_r_match = 0.0;
    double accuracy = 0.0;
    double hint_rate = 0.0;
};

StepStats grpo_step(Policy& policy, const Policy& reference, std::span<const GrpoGroup> groups,
                    const GrpoConfig& config, AdamW& optimizer);

struct CurvePoint {
    std::size_t step = 0;
    std::string variant;
    std::string component;
    double value = 0.0;
};

struct TrainResult {
    std::vector<StepStats> steps;
    std::vector<CurvePoint> curve;
};

// epochs x batches of rollout -> score -> advantages -> update. The reference
// policy is a frozen copy of `policy` taken on entry.
TrainResult train(Policy& policy, const std::vector<QAItem>& dataset, const ListenerPool& pool,
                  RewardVariant variant, const GrpoConfig& config, std::uint64_t seed,
                  const std::function<void(const StepStats&)>& on_step = {});

}  // namespace remul
