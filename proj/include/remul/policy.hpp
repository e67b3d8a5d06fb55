#pragma once

#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "remul/rng.hpp"
#include "remul/text_model.hpp"
#include "remul/tiny_lm.hpp"
#include "remul/trace.hpp"

namespace remul {

enum class PolicyKind { template_policy, tiny_autoregressive };

std::string_view to_string(PolicyKind kind);
PolicyKind policy_kind_from_string(std::string_view name);

// Sampling configuration of the speaker: temperature 0.7, nucleus 0.9,
// repetition penalty 1.1.
Decoding default_speaker_decoding();

// One sampled speaker output. `actions` are the categorical choices made at
// each decision point; `old_logprobs` are their log-probabilities under the
// sampling policy (temperature applied, before nucleus truncation).
struct Rollout {
    std::string prompt;
    std::string text;
    std::vector<int> actions;
    std::vector<double> old_logprobs;
    bool failed = false;  // generation budget exhausted without a closed sequence
};

// A learnable speaker. Every decision of a rollout is a categorical choice
// whose logits are a differentiable function of the flat parameter vector.
class Policy : public TextModel {
public:
    virtual PolicyKind kind() const = 0;
    virtual std::unique_ptr<Policy> clone() const = 0;

    virtual Rollout sample(const std::string& prompt, Rng& rng) const = 0;

    // Temperature-scaled logits per decision of `rollout`.
    virtual std::vector<Vector> decision_logits(const Rollout& rollout) const = 0;
    // Accumulates dLoss/dParams into `grad` given dLoss/dLogits per decision
    // (with respect to the temperature-scaled logits).
    virtual void backward(const Rollout& rollout, const std::vector<Vector>& dlogits,
                          std::span<double> grad) const = 0;

    virtual std::span<double> parameters() = 0;
    virtual std::span<const double> parameters() const = 0;

    // TextModel: with an empty assistant prefix, samples a full output;
    // otherwise continues from the prefix.
    std::string generate(const GenerationRequest& request) const override;

    const Decoding& decoding() const noexcept { return decoding_; }
    void set_decoding(const Decoding& d) { decoding_ = d; }

protected:
    virtual std::string continue_from(const std::string& prompt, const std::string& assistant_prefix,
                                      Rng& rng) const = 0;

    Decoding decoding_ = default_speaker_decoding();
};

// Samples an index from softmax(logits) restricted to the smallest nucleus
// whose mass reaches top_p.
int sample_nucleus(const Vector& logits, double top_p, Rng& rng);
Vector log_softmax(const Vector& logits);

// Answer a toy solver believes in for a prompt: the option equal to the sum of
// a synthetic "What is a + b?" question, otherwise a prompt-hashed option.
std::string believed_answer(std::string_view prompt);

// Categorical distribution over fixed trace templates. Templates differ in
// whether (and where) they carry "#exec:" directives, whether they answer
// correctly, and how they react to an injected hint. Continuations follow a
// directive when one is present and fall back to the believed answer.
class TemplatePolicy final : public Policy {
public:
    struct Template {
        std::string name;
        bool executable;  // every training prefix carries a directive
    };

    static const std::vector<Template>& templates();
    static std::size_t template_count() { return templates().size(); }

    explicit TemplatePolicy(std::vector<double> logits = {}, std::string name = "template-policy");

    std::string name() const override { return name_; }
    PolicyKind kind() const override { return PolicyKind::template_policy; }
    std::unique_ptr<Policy> clone() const override { return std::make_unique<TemplatePolicy>(*this); }

    Rollout sample(const std::string& prompt, Rng& rng) const override;
    std::vector<Vector> decision_logits(const Rollout& rollout) const override;
    void backward(const Rollout& rollout, const std::vector<Vector>& dlogits, std::span<double> grad) const override;

    std::span<double> parameters() override { return logits_; }
    std::span<const double> parameters() const override { return logits_; }

    // Probabilities at temperature 1 / at the sampling temperature.
    std::vector<double> probabilities(bool sampling_temperature = true) const;
    double executable_mass() const;

    static std::string render(std::size_t template_index, const std::string& prompt);

protected:
    std::string continue_from(const std::string& prompt, const std::string& assistant_prefix,
                              Rng& rng) const override;

private:
    std::vector<double> logits_;
    std::string name_;
};

// Autoregressive speaker backed by TinyLM. Decisions are generated tokens.
class TinyLMPolicy final : public Policy {
public:
    TinyLMPolicy(TinyLM model, Tokenizer tokenizer, int max_new_tokens = 48, std::string name = "tiny-lm");

    std::string name() const override { return name_; }
    PolicyKind kind() const override { return PolicyKind::tiny_autoregressive; }
    std::unique_ptr<Policy> clone() const override { return std::make_unique<TinyLMPolicy>(*this); }

    Rollout sample(const std::string& prompt, Rng& rng) const override;
    std::vector<Vector> decision_logits(const Rollout& rollout) const override;
    void backward(const Rollout& rollout, const std::vector<Vector>& dlogits, std::span<double> grad) const override;

    std::span<double> parameters() override { return model_.base().values(); }
    std::span<const double> parameters() const override { return model_.base().values(); }

    TinyLM& model() noexcept { return model_; }
    const TinyLM& model() const noexcept { return model_; }
    const Tokenizer& tokenizer() const noexcept { return tokenizer_; }
    int max_new_tokens() const noexcept { return max_new_tokens_; }

    // Prompt tokens the decisions of a rollout condition on.
    std::vector<int> prompt_tokens(const std::string& prompt) const;

protected:
    std::string continue_from(const std::string& prompt, const std::string& assistant_prefix,
                              Rng& rng) const override;

private:
    // Generates until <eos> or the budget; returns generated ids.
    std::vector<int> generate_tokens(std::vector<int> context, Rng& rng, std::vector<double>* logprobs,
                                     bool* finished) const;

    TinyLM model_;
    Tokenizer tokenizer_;
    int max_new_tokens_;
    std::string name_;
};

}  // namespace remul
