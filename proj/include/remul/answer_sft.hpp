#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "remul/policy.hpp"
#include "remul/tiny_lm.hpp"
#include "remul/trace.hpp"

namespace remul {

// Half-open token range [begin, end).
struct TokenSpan {
    std::size_t begin = 0;
    std::size_t end = 0;
};

// Positions of the answer tokens. Throws SpanOutOfBounds when the span leaves
// the sequence or reaches back into the prompt/thinking part (< reasoning_end).
std::vector<std::size_t> answer_mask(std::size_t sequence_length, std::size_t reasoning_end, TokenSpan span);

struct MaskedBatch {
    std::vector<std::vector<int>> sequences;
    std::vector<std::vector<std::size_t>> answer_sets;
    std::vector<std::size_t> prompt_lengths;

    std::size_t size() const noexcept { return sequences.size(); }
    void validate() const;  // throws ShapeMismatch / SpanOutOfBounds
};

class LogitModel {
public:
    virtual ~LogitModel() = default;
    // rows = tokens.size(); row t scores the token at t + 1.
    virtual Matrix logits(std::span<const int> tokens) const = 0;
};

class TinyLMLogits final : public LogitModel {
public:
    explicit TinyLMLogits(const TinyLM& model) : model_(model) {}
    Matrix logits(std::span<const int> tokens) const override { return model_.forward(tokens); }

private:
    const TinyLM& model_;
};

struct MaskedLoss {
    double loss = 0.0;
    std::vector<Matrix> dlogits;  // per sequence, same shape as its logits
};

// -sum_{i in A} log p(y_i | y_<i) per sequence, mean over sequences, given
// precomputed logits. Rows that do not score an answer token get exactly zero
// gradient.
MaskedLoss masked_nll_from_logits(std::span<const Matrix> logits, const MaskedBatch& batch);

// Parallel over sequences with an ordered reduction; the serial variant is
// the reference.
MaskedLoss masked_nll(const LogitModel& model, const MaskedBatch& batch);
MaskedLoss masked_nll_serial(const LogitModel& model, const MaskedBatch& batch);

struct SftExample {
    std::vector<int> tokens;
    std::size_t prompt_length = 0;   // prompt + "<think>"
    std::size_t reasoning_end = 0;   // index of "</think>" + 1
    std::vector<std::size_t> answer_set;
    std::size_t label_position = 0;  // index of the gold label token
    std::string gold;
};

// Teacher-forced targets: thinking sampled once from `policy`, followed by the
// gold answer sentence. Only the answer sentence is supervised.
std::vector<SftExample> build_sft_examples(const TinyLMPolicy& policy, const std::vector<QAItem>& items,
                                           std::uint64_t seed);
MaskedBatch to_batch(const std::vector<SftExample>& examples);

// Share of examples whose gold label has the highest score among the option
// labels at the label position.
double answer_accuracy(const TinyLM& model, const Tokenizer& tokenizer, const std::vector<SftExample>& examples,
                       const std::vector<QAItem>& items);

struct SftStats {
    std::vector<double> epoch_loss;
    std::uint64_t base_checksum_before = 0;
    std::uint64_t base_checksum_after = 0;
};

// Trains only the adapter attached to `model` (attaching a fresh one when
// absent) with AdamW. Throws NonFiniteLoss.
SftStats train_answer_adapter(TinyLM& model, const MaskedBatch& batch, const AdapterConfig& config,
                              std::uint64_t seed);

}  // namespace remul
