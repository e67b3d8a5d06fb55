#include "remul/answer_sft.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "remul/datasets.hpp"
#include "remul/error.hpp"
#include "remul/optimizer.hpp"

namespace remul {

std::vector<std::size_t> answer_mask(std::size_t sequence_length, std::size_t reasoning_end, TokenSpan span) {
    if (span.begin > span.end || span.end > sequence_length) {
        throw SpanOutOfBounds("answer span [" + std::to_string(span.begin) + ", " + std::to_string(span.end) +
                              ") outside a sequence of length " + std::to_string(sequence_length));
    }
    if (span.begin == span.end) return {};
    if (span.begin < reasoning_end) {
        throw SpanOutOfBounds("answer span starts at " + std::to_string(span.begin) +
                              ", inside the reasoning segment ending at " + std::to_string(reasoning_end));
    }
    std::vector<std::size_t> out(span.end - span.begin);
    std::iota(out.begin(), out.end(), span.begin);
    return out;
}

void MaskedBatch::validate() const {
    if (answer_sets.size() != sequences.size() || prompt_lengths.size() != sequences.size()) {
        throw ShapeMismatch("masked batch: sequences, answer sets and prompt lengths differ in count");
    }
    for (std::size_t s = 0; s < sequences.size(); ++s) {
        for (std::size_t i : answer_sets[s]) {
            if (i >= sequences[s].size() || i < std::max<std::size_t>(prompt_lengths[s], 1)) {
                throw SpanOutOfBounds("masked batch: answer position " + std::to_string(i) + " invalid in sequence " +
                                      std::to_string(s));
            }
        }
    }
}

namespace {

// Loss and logit gradient of one sequence, unscaled by the batch size.
double sequence_nll(const Matrix& logits, const std::vector<int>& tokens, const std::vector<std::size_t>& answers,
                    Matrix* dlogits) {
    if (logits.rows() != static_cast<Eigen::Index>(tokens.size())) throw ShapeMismatch("logit rows != tokens");
    *dlogits = Matrix::Zero(logits.rows(), logits.cols());
    double loss = 0.0;
    for (std::size_t i : answers) {
        const auto row = static_cast<Eigen::Index>(i - 1);
        const Vector z = logits.row(row).transpose();
        const double mx = z.maxCoeff();
        const Vector e = (z.array() - mx).exp();
        const double sum = e.sum();
        const int y = tokens[i];
        loss -= z[y] - mx - std::log(sum);
        Vector g = e / sum;
        g[y] -= 1.0;
        dlogits->row(row) += g.transpose();
    }
    return loss;
}

MaskedLoss reduce(std::vector<double>& losses, std::vector<Matrix>& grads) {
    MaskedLoss out;
    const double n = static_cast<double>(losses.size());
    for (double l : losses) out.loss += l;  // fixed order
    out.loss /= n;
    for (auto& g : grads) g /= n;
    out.dlogits = std::move(grads);
    return out;
}

}  // namespace

MaskedLoss masked_nll_from_logits(std::span<const Matrix> logits, const MaskedBatch& batch) {
    if (batch.size() == 0) throw PreconditionError("masked loss needs a non-empty batch");
    batch.validate();
    if (logits.size() != batch.size()) throw ShapeMismatch("one logit matrix per sequence expected");
    std::vector<double> losses(batch.size());
    std::vector<Matrix> grads(batch.size());
    for (std::size_t s = 0; s < batch.size(); ++s) {
        losses[s] = sequence_nll(logits[s], batch.sequences[s], batch.answer_sets[s], &grads[s]);
    }
    return reduce(losses, grads);
}

MaskedLoss masked_nll(const LogitModel& model, const MaskedBatch& batch) {
    if (batch.size() == 0) throw PreconditionError("masked loss needs a non-empty batch");
    batch.validate();
    std::vector<double> losses(batch.size());
    std::vector<Matrix> grads(batch.size());
    const auto n = static_cast<std::ptrdiff_t>(batch.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t s = 0; s < n; ++s) {
        const auto i = static_cast<std::size_t>(s);
        const Matrix z = model.logits(batch.sequences[i]);
        losses[i] = sequence_nll(z, batch.sequences[i], batch.answer_sets[i], &grads[i]);
    }
    return reduce(losses, grads);
}

MaskedLoss masked_nll_serial(const LogitModel& model, const MaskedBatch& batch) {
    if (batch.size() == 0) throw PreconditionError("masked loss needs a non-empty batch");
    batch.validate();
    std::vector<double> losses(batch.size());
    std::vector<Matrix> grads(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const Matrix z = model.logits(batch.sequences[i]);
        losses[i] = sequence_nll(z, batch.sequences[i], batch.answer_sets[i], &grads[i]);
    }
    return reduce(losses, grads);
}

std::vector<SftExample> build_sft_examples(const TinyLMPolicy& policy, const std::vector<QAItem>& items,
                                           std::uint64_t seed) {
    const Tokenizer& tok = policy.tokenizer();
    const int close = tok.id(kThinkClose);
    const auto max_len = static_cast<std::size_t>(policy.model().config().max_len);
    std::vector<SftExample> out;
    out.reserve(items.size());
    for (const auto& item : items) {
        const std::string prompt = build_prompt(item);
        Rng rng(derive_seed(seed, stable_hash(item.id)));
        const Rollout r = policy.sample(prompt, rng);
        std::vector<int> thinking;
        for (int t : r.actions) {
            if (t == close || t == tok.eos()) break;
            thinking.push_back(t);
        }
        SftExample ex;
        ex.gold = item.gold;
        ex.tokens = policy.prompt_tokens(prompt);
        ex.prompt_length = ex.tokens.size();
        const auto answer = tok.encode("Answer: Option " + item.gold);
        const std::size_t tail = answer.size() + 2;
        if (ex.prompt_length + tail > max_len) throw PreconditionError("prompt of '" + item.id + "' too long");
        const std::size_t room = max_len - ex.prompt_length - tail;
        if (thinking.size() > room) thinking.resize(room);
        ex.tokens.insert(ex.tokens.end(), thinking.begin(), thinking.end());
        ex.tokens.push_back(close);
        ex.reasoning_end = ex.tokens.size();
        ex.tokens.insert(ex.tokens.end(), answer.begin(), answer.end());
        ex.label_position = ex.tokens.size() - 1;
        ex.tokens.push_back(tok.eos());
        ex.answer_set = answer_mask(ex.tokens.size(), ex.reasoning_end, {ex.reasoning_end, ex.tokens.size()});
        out.push_back(std::move(ex));
    }
    return out;
}

MaskedBatch to_batch(const std::vector<SftExample>& examples) {
    MaskedBatch b;
    for (const auto& ex : examples) {
        b.sequences.push_back(ex.tokens);
        b.answer_sets.push_back(ex.answer_set);
        b.prompt_lengths.push_back(ex.prompt_length);
    }
    return b;
}

double answer_accuracy(const TinyLM& model, const Tokenizer& tokenizer, const std::vector<SftExample>& examples,
                       const std::vector<QAItem>& items) {
    if (examples.size() != items.size()) throw ShapeMismatch("one example per item expected");
    if (examples.empty()) return 0.0;
    std::size_t hits = 0;
    for (std::size_t e = 0; e < examples.size(); ++e) {
        const auto& ex = examples[e];
        const std::span<const int> context(ex.tokens.data(), ex.label_position);
        const Matrix z = model.forward(context);
        const auto row = z.row(z.rows() - 1);
        std::string best;
        double best_score = -std::numeric_limits<double>::infinity();
        for (const auto& o : items[e].options) {
            const double s = row[tokenizer.id(o.label)];
            if (s > best_score) {
                best_score = s;
                best = o.label;
            }
        }
        if (best == ex.gold) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(examples.size());
}

SftStats train_answer_adapter(TinyLM& model, const MaskedBatch& batch, const AdapterConfig& config,
                              std::uint64_t seed) {
    config.validate();
    if (batch.size() == 0) throw PreconditionError("answer finetuning needs a non-empty dataset");
    batch.validate();
    if (!model.has_adapter()) model.attach_adapter(config, derive_seed(seed, 0xada));
    SftStats stats;
    stats.base_checksum_before = model.base().checksum();
    AdamW optimizer({config.learning_rate, 0.9, 0.999, 1e-8, config.weight_decay});
    Rng dropout_rng(derive_seed(seed, 0xd40));
    std::vector<std::size_t> order(batch.size());
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle(derive_seed(seed, 0x5f7, static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle);
        double total = 0.0;
        for (std::size_t s : order) {
            ForwardCache cache;
            const Matrix z = model.forward(batch.sequences[s], &cache, config.dropout > 0 ? &dropout_rng : nullptr);
            Matrix dz;
            const double loss = sequence_nll(z, batch.sequences[s], batch.answer_sets[s], &dz);
            if (!std::isfinite(loss)) throw NonFiniteLoss("non-finite answer loss on sequence " + std::to_string(s));
            ParamBundle grad = model.adapter().zeros_like();
            model.backward(cache, dz, nullptr, &grad);
            optimizer.step(model.adapter().values(), grad.values());
            total += loss;
        }
        stats.epoch_loss.push_back(total / static_cast<double>(batch.size()));
    }
    stats.base_checksum_after = model.base().checksum();
    return stats;
}

}  // namespace remul
