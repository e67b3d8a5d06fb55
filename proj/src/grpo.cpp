#include "remul/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "remul/datasets.hpp"
#include "remul/error.hpp"
#include "remul/faithfulness_eval.hpp"
#include "remul/truncation.hpp"

namespace remul {

void GrpoConfig::validate() const {
    if (!(learning_rate > 0)) throw ConfigError("grpo: learning_rate must be positive");
    if (batch_items < 1) throw ConfigError("grpo: batch_items must be positive");
    if (entropy_coef < 0 || kl_coef < 0) throw ConfigError("grpo: coefficients must be non-negative");
    if (group_size < 2) throw ConfigError("grpo: group size must be at least 2");
    if (epochs < 0) throw ConfigError("grpo: epochs must be non-negative");
    if (!(advantage_epsilon > 0)) throw ConfigError("grpo: advantage_epsilon must be positive");
    if (!(clip_range > 0)) throw ConfigError("grpo: clip_range must be positive");
    if (lambda < 0) throw ConfigError("grpo: lambda must be non-negative");
}

GrpoGroup rollout_group(const Policy& policy, const QAItem& item, std::size_t group_size, std::uint64_t seed,
                        bool hinted, SplitMode mode) {
    if (group_size < 2) throw PreconditionError("group size must be at least 2");
    GrpoGroup g;
    g.item = item;
    g.hinted = hinted;
    const std::string prompt = hinted ? build_hint_prompt(item) : build_prompt(item);
    const std::uint64_t base = derive_seed(seed, stable_hash(item.id));
    for (std::size_t i = 0; i < group_size; ++i) {
        Rng rng(derive_seed(base, 1, i));
        Rollout r = policy.sample(prompt, rng);
        ReasoningTrace trace;
        bool degenerate = r.failed;
        try {
            trace = parse_trace(r.text, item.options, mode);
        } catch (const MalformedTrace&) {
            trace = ReasoningTrace{};
            trace.raw = r.text;
            trace.split_mode = mode;
            degenerate = true;
        }
        if (trace.n() == 0) degenerate = true;
        g.rollouts.push_back(std::move(r));
        g.traces.push_back(std::move(trace));
        g.degenerate.push_back(degenerate ? 1 : 0);
    }
    if (hinted) {
        Rng rng(derive_seed(base, 2));
        const Rollout plain = policy.sample(build_prompt(item), rng);
        try {
            g.unhinted_answer = parse_trace(plain.text, item.options, mode).answer;
        } catch (const MalformedTrace&) {
        }
    }
    return g;
}

void score_group(GrpoGroup& group, const ListenerPool& pool, RewardVariant variant, int lambda, std::uint64_t seed) {
    if (uses_listeners(variant) && pool.size() == 0) throw PreconditionError("listener pool is empty");
    const int lam = lambda > 0 ? lambda : static_cast<int>(pool.size());
    const AnswerLabel gold{group.item.gold};
    group.records.assign(group.size(), RewardRecord{});
    group.rewards.assign(group.size(), 0.0);
    for (std::size_t i = 0; i < group.size(); ++i) {
        const ReasoningTrace& trace = group.traces[i];
        RewardRecord& rec = group.records[i];
        rec.variant = variant;
        rec.correct = correctness_reward(trace.answer, gold) == 1;
        rec.lambda = lam;
        if (uses_listeners(variant) && !group.degenerate[i]) {
            const TruncationSet tset = training_truncations(trace, group.item.id);
            const VerdictMatrix verdicts =
                pool_execute(pool, group.item, tset, derive_seed(seed, stable_hash(group.item.id), i));
            auto m = match_reward(verdicts, trace.answer);
            rec.match_matrix = std::move(m.matrix);
            rec.r_match = m.r_match;
        }
        switch (variant) {
            case RewardVariant::faithfulness_only: rec.total = rec.r_match; break;
            case RewardVariant::balanced:
                rec.r_bal = balanced_reward(rec.r_match, trace.answer, gold, lam);
                rec.total = rec.r_bal;
                break;
            case RewardVariant::correctness_only: rec.total = rec.correct ? 1.0 : 0.0; break;
            case RewardVariant::hint_optimized: {
                const bool changed = group.unhinted_answer.parsed() && trace.answer.parsed() &&
                                     trace.answer != group.unhinted_answer;
                rec.total = hint_reward(trace, changed);
                break;
            }
        }
        if (group.degenerate[i]) rec.total = 0.0;
        group.rewards[i] = rec.total;
    }
}

void score_groups(std::span<GrpoGroup> groups, const ListenerPool& pool, RewardVariant variant, int lambda,
                  std::uint64_t seed) {
    const auto n = static_cast<std::ptrdiff_t>(groups.size());
    std::vector<std::exception_ptr> errors(groups.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t g = 0; g < n; ++g) {
        try {
            score_group(groups[static_cast<std::size_t>(g)], pool, variant, lambda, seed);
        } catch (...) {
            errors[static_cast<std::size_t>(g)] = std::current_exception();
        }
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

void score_groups_serial(std::span<GrpoGroup> groups, const ListenerPool& pool, RewardVariant variant, int lambda,
                         std::uint64_t seed) {
    for (auto& g : groups) score_group(g, pool, variant, lambda, seed);
}

std::vector<double> compute_advantages(std::span<const double> rewards, double eps) {
    std::vector<double> adv(rewards.size(), 0.0);
    if (rewards.empty()) return adv;
    if (std::all_of(rewards.begin(), rewards.end(), [&](double r) { return r == rewards.front(); })) return adv;
    const double n = static_cast<double>(rewards.size());
    const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    const double sd = std::sqrt(var / n);
    for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = (rewards[i] - mean) / (sd + eps);
    return adv;
}

LossAndGrad grpo_loss_and_grad(const Policy& policy, const Policy& reference, std::span<const GrpoGroup> groups,
                               const GrpoConfig& config) {
    LossAndGrad out;
    out.grad.assign(policy.parameters().size(), 0.0);
    std::size_t rollouts = 0, decisions = 0;
    for (const auto& g : groups) {
        if (g.advantages.size() != g.size()) throw ShapeMismatch("group '" + g.item.id + "' has no advantages");
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!g.degenerate[i] && !g.rollouts[i].actions.empty()) ++rollouts;
        }
    }
    if (rollouts == 0) return out;
    const double lo = 1.0 - config.clip_range, hi = 1.0 + config.clip_range;

    for (const auto& g : groups) {
        double group_loss = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const Rollout& r = g.rollouts[i];
            if (g.degenerate[i] || r.actions.empty()) continue;
            const auto z = policy.decision_logits(r);
            const auto zref = reference.decision_logits(r);
            const double A = g.advantages[i];
            const double w = 1.0 / (static_cast<double>(rollouts) * static_cast<double>(r.actions.size()));
            std::vector<Vector> dz(z.size());
            for (std::size_t k = 0; k < z.size(); ++k) {
                const Vector logp = log_softmax(z[k]);
                const Vector p = logp.array().exp();
                const int a = r.actions[k];
                const double lp = logp[a];
                const double ref_lp = log_softmax(zref[k])[a];
                const double ratio = std::exp(lp - r.old_logprobs[k]);
                const double clipped = std::clamp(ratio, lo, hi);
                const double surrogate = std::min(ratio * A, clipped * A);
                const double k3 = std::exp(ref_lp - lp) - (ref_lp - lp) - 1.0;
                const double H = -(p.array() * logp.array()).sum();
                group_loss += w * (-surrogate + config.kl_coef * k3 - config.entropy_coef * H);
                out.kl += k3;
                out.entropy += H;
                ++decisions;

                const bool unclipped_active = (ratio >= lo && ratio <= hi) || ratio * A <= clipped * A;
                double c = config.kl_coef * (1.0 - std::exp(ref_lp - lp));
                if (unclipped_active) c -= ratio * A;
                Vector d = -c * p;
                d[a] += c;
                d.array() += config.entropy_coef * p.array() * (logp.array() + H);
                dz[k] = w * d;
            }
            policy.backward(r, dz, out.grad);
        }
        if (!std::isfinite(group_loss)) throw NonFiniteLoss("non-finite loss in group '" + g.item.id + "'");
        out.loss += group_loss;
    }
    for (double v : out.grad) {
        if (!std::isfinite(v)) throw NonFiniteLoss("non-finite gradient");
    }
    if (decisions) {
        out.kl /= static_cast<double>(decisions);
        out.entropy /= static_cast<double>(decisions);
    }
    return out;
}

StepStats grpo_step(Policy& policy, const Policy& reference, std::span<const GrpoGroup> groups,
                    const GrpoConfig& config, AdamW& optimizer) {
    StepStats s;
    const LossAndGrad lg = grpo_loss_and_grad(policy, reference, groups, config);
    optimizer.step(policy.parameters(), lg.grad);
    s.loss = lg.loss;
    s.kl = lg.kl;
    s.entropy = lg.entropy;
    std::size_t n = 0;
    for (const auto& g : groups) {
        for (std::size_t i = 0; i < g.size(); ++i) {
            s.mean_reward += g.rewards[i];
            s.mean_abs_advantage += std::abs(g.advantages[i]);
            s.mean_r_match += g.records[i].r_match;
            s.accuracy += g.records[i].correct ? 1.0 : 0.0;
            s.hint_rate += g.records[i].variant == RewardVariant::hint_optimized ? g.rewards[i] : 0.0;
            ++n;
        }
    }
    if (n) {
        const double dn = static_cast<double>(n);
        s.mean_reward /= dn;
        s.mean_abs_advantage /= dn;
        s.mean_r_match /= dn;
        s.accuracy /= dn;
        s.hint_rate /= dn;
    }
    return s;
}

namespace {

void push_curve(TrainResult& out, const StepStats& s, RewardVariant variant) {
    const std::string v(to_string(variant));
    switch (variant) {
        case RewardVariant::faithfulness_only: out.curve.push_back({s.step, v, "r_match", s.mean_r_match}); break;
        case RewardVariant::balanced:
            out.curve.push_back({s.step, v, "r_match", s.mean_r_match});
            out.curve.push_back({s.step, v, "correct", s.accuracy});
            break;
        case RewardVariant::correctness_only: out.curve.push_back({s.step, v, "correct", s.accuracy}); break;
        case RewardVariant::hint_optimized: out.curve.push_back({s.step, v, "hint", s.hint_rate}); break;
    }
    out.curve.push_back({s.step, v, "total", s.mean_reward});
}

}  // namespace

TrainResult train(Policy& policy, const std::vector<QAItem>& dataset, const ListenerPool& pool,
                  RewardVariant variant, const GrpoConfig& config, std::uint64_t seed,
                  const std::function<void(const StepStats&)>& on_step) {
    if (dataset.empty()) throw PreconditionError("training dataset is empty");
    config.validate();
    if (uses_listeners(variant) && pool.size() == 0) throw PreconditionError("listener pool is empty");
    const auto reference = policy.clone();
    AdamW optimizer({config.learning_rate, 0.9, 0.999, 1e-8, 0.0});
    const bool hinted = variant == RewardVariant::hint_optimized;

    TrainResult out;
    std::size_t step = 0;
    std::vector<std::size_t> order(dataset.size());
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(derive_seed(seed, 0x5eed, static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (std::size_t begin = 0; begin < order.size(); begin += config.batch_items) {
            if (config.max_steps && step >= config.max_steps) return out;
            const std::size_t end = std::min(order.size(), begin + config.batch_items);
            std::vector<GrpoGroup> groups(end - begin);
            const std::uint64_t step_seed = derive_seed(seed, 0x57e9, step);
            const auto nb = static_cast<std::ptrdiff_t>(groups.size());
#pragma omp parallel for schedule(dynamic)
            for (std::ptrdiff_t b = 0; b < nb; ++b) {
                const auto bi = static_cast<std::size_t>(b);
                groups[bi] = rollout_group(policy, dataset[order[begin + bi]], config.group_size, step_seed, hinted,
                                           config.split_mode);
            }
            score_groups(groups, pool, variant, config.lambda, step_seed);
            for (auto& g : groups) g.advantages = compute_advantages(g.rewards, config.advantage_epsilon);
            StepStats s = grpo_step(policy, *reference, groups, config, optimizer);
            s.step = step;
            out.steps.push_back(s);
            push_curve(out, s, variant);
            if (on_step) on_step(s);
            ++step;
        }
    }
    return out;
}

}  // namespace remul
