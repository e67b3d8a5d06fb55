#include "remul/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

#include "remul/datasets.hpp"
#include "remul/error.hpp"
#include "remul/faithfulness_eval.hpp"
#include "remul/listeners.hpp"

namespace remul {

std::string_view to_string(PolicyKind kind) {
    return kind == PolicyKind::template_policy ? "template_policy" : "tiny_autoregressive";
}

PolicyKind policy_kind_from_string(std::string_view name) {
    if (name == "template_policy" || name == "template") return PolicyKind::template_policy;
    if (name == "tiny_autoregressive" || name == "tiny_lm") return PolicyKind::tiny_autoregressive;
    throw ConfigError("unknown policy kind '" + std::string(name) + "'");
}

Decoding default_speaker_decoding() {
    Decoding d;
    d.temperature = 0.7;
    d.top_p = 0.9;
    d.repetition_penalty = 1.1;
    return d;
}

Vector log_softmax(const Vector& logits) {
    const double mx = logits.maxCoeff();
    const double lse = mx + std::log((logits.array() - mx).exp().sum());
    return logits.array() - lse;
}

int sample_nucleus(const Vector& logits, double top_p, Rng& rng) {
    const Vector logp = log_softmax(logits);
    std::vector<int> order(static_cast<std::size_t>(logits.size()));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return logp[a] > logp[b]; });
    std::vector<double> mass;
    double cumulative = 0.0;
    for (int idx : order) {
        const double p = std::exp(logp[idx]);
        if (p <= 0.0) break;
        mass.push_back(p);
        cumulative += p;
        if (cumulative >= top_p) break;
    }
    double u = uniform01(rng) * cumulative;
    for (std::size_t i = 0; i < mass.size(); ++i) {
        if (u < mass[i]) return order[i];
        u -= mass[i];
    }
    return order[mass.empty() ? 0 : mass.size() - 1];
}

std::string Policy::generate(const GenerationRequest& request) const {
    Rng rng(derive_seed(request.seed, 0x9e4));
    if (request.assistant_prefix.empty()) return sample(request.user_text(), rng).text;
    return continue_from(request.user_text(), request.assistant_prefix, rng);
}

// ---------------------------------------------------------------------------
// Toy solver shared by the template policy.

namespace {

std::string strip_hint(std::string_view prompt) {
    const std::size_t at = prompt.rfind("\nHint: ");
    return std::string(at == std::string_view::npos ? prompt : prompt.substr(0, at));
}

struct Addition {
    int a = 0;
    int b = 0;
};

std::optional<Addition> parse_addition(std::string_view prompt) {
    constexpr std::string_view kLead = "What is ";
    const std::size_t at = prompt.find(kLead);
    if (at == std::string_view::npos) return std::nullopt;
    int a = 0, b = 0;
    const std::string rest(prompt.substr(at + kLead.size()));
    if (std::sscanf(rest.c_str(), "%d + %d?", &a, &b) != 2) return std::nullopt;
    return Addition{a, b};
}

std::string next_label(const std::vector<Option>& options, const std::string& label) {
    for (std::size_t i = 0; i < options.size(); ++i) {
        if (options[i].label == label) return options[(i + 1) % options.size()].label;
    }
    return label;
}

std::string option_text(const std::vector<Option>& options, const std::string& label) {
    for (const auto& o : options) {
        if (o.label == label) return o.text;
    }
    return label;
}

std::string finish(const std::vector<std::string>& steps, const std::string& label, double confidence) {
    char conf[32];
    std::snprintf(conf, sizeof conf, "%.2f", confidence);
    return render_trace(steps, "") + "Confidence: " + conf + "\n" + answer_sentence(label);
}

std::string continuation(const std::string& assistant_prefix, const AnswerLabel& answer) {
    const bool closed = assistant_prefix.find(kThinkClose) != std::string::npos;
    if (!answer.parsed()) return closed ? "I cannot tell." : "I cannot tell.\n</think>";
    if (closed) return " Option " + answer.value();
    return "Following the reasoning so far.\n" + std::string(kThinkClose) + answer_sentence(answer.value());
}

}  // namespace

std::string believed_answer(std::string_view prompt) {
    const std::string base = strip_hint(prompt);
    const auto options = options_in_prompt(base);
    if (options.empty()) return {};
    if (const auto add = parse_addition(base)) {
        const std::string sum = std::to_string(add->a + add->b);
        for (const auto& o : options) {
            if (o.text == sum) return o.label;
        }
    }
    return options[stable_hash(base) % options.size()].label;
}

// ---------------------------------------------------------------------------
// TemplatePolicy

const std::vector<TemplatePolicy::Template>& TemplatePolicy::templates() {
    static const std::vector<Template> t{
        {"direct_exec", true}, {"exec_wrong", true}, {"late_exec", false}, {"posthoc", false},
        {"posthoc_wrong", false}, {"hint_cite", false}, {"hint_silent", false}, {"backtrack", false},
    };
    return t;
}

TemplatePolicy::TemplatePolicy(std::vector<double> logits, std::string name)
    : logits_(std::move(logits)), name_(std::move(name)) {
    if (logits_.empty()) logits_.assign(template_count(), 0.0);
    if (logits_.size() != template_count()) {
        throw ShapeMismatch("template policy expects " + std::to_string(template_count()) + " logits");
    }
}

std::string TemplatePolicy::render(std::size_t index, const std::string& prompt) {
    const std::string base = strip_hint(prompt);
    const auto options = options_in_prompt(base);
    const std::string gold = believed_answer(base);
    const std::string wrong = next_label(options, gold);
    const auto hint = hint_label_in_prompt(prompt);
    const auto add = parse_addition(base);

    std::vector<std::string> work;
    std::string conclusion;
    if (add) {
        const std::string a = std::to_string(add->a), b = std::to_string(add->b);
        work = {"Add " + a + " and " + b + ".", a + " + " + b + " = " + option_text(options, gold) + "."};
        conclusion = "So the result is " + option_text(options, gold) + ".";
    } else {
        work = {"Consider each option carefully.", "Option " + gold + " fits all the constraints."};
        conclusion = "Checking the remaining options rules them out.";
    }
    const std::string directive = std::string(kExecDirective);
    const std::vector<std::string> posthoc{"The answer seems clear.", "It must be right.", "No need to check."};

    switch (index) {
        case 0: {
            std::vector<std::string> steps{directive + gold};
            steps.insert(steps.end(), work.begin(), work.end());
            steps.push_back(conclusion);
            return finish(steps, gold, 0.9);
        }
        case 1: {
            std::vector<std::string> steps{directive + wrong};
            if (add) {
                const std::string a = std::to_string(add->a), b = std::to_string(add->b);
                const std::string w = option_text(options, wrong);
                steps.push_back("Add " + a + " and " + b + ".");
                steps.push_back(a + " + " + b + " = " + w + ".");
                steps.push_back("So the result is " + w + ".");
            } else {
                steps.push_back("Consider each option carefully.");
                steps.push_back("Option " + wrong + " fits all the constraints.");
                steps.push_back(conclusion);
            }
            return finish(steps, wrong, 0.9);
        }
        case 2: {
            std::vector<std::string> steps = work;
            steps.push_back(conclusion);
            steps.push_back(directive + gold);
            return finish(steps, gold, 0.8);
        }
        case 3: return finish(posthoc, gold, 0.6);
        case 4: return finish(posthoc, wrong, 0.6);
        case 5:
            if (hint) {
                return finish({"You said the answer is Option " + *hint + ".", "I agree with the hint.",
                               "Going with Option " + *hint + "."},
                              *hint, 0.7);
            }
            return finish(posthoc, gold, 0.6);
        case 6:
            if (hint) return finish({"Let me think.", "Option " + *hint + " looks right.", "Done."}, *hint, 0.7);
            return finish(posthoc, wrong, 0.6);
        case 7: {
            std::vector<std::string> steps{work.front(), directive + gold, "Wait, let me double-check the sum."};
            steps.push_back("Hmm, " + work.back());
            steps.push_back(conclusion);
            return finish(steps, gold, 0.8);
        }
        default: break;
    }
    throw PreconditionError("template index out of range");
}

std::vector<double> TemplatePolicy::probabilities(bool sampling_temperature) const {
    Vector z = Eigen::Map<const Vector>(logits_.data(), static_cast<Eigen::Index>(logits_.size()));
    if (sampling_temperature) z /= decoding_.temperature;
    const Vector p = log_softmax(z).array().exp();
    return {p.data(), p.data() + p.size()};
}

double TemplatePolicy::executable_mass() const {
    const auto p = probabilities();
    double mass = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        if (templates()[k].executable) mass += p[k];
    }
    return mass;
}

Rollout TemplatePolicy::sample(const std::string& prompt, Rng& rng) const {
    const Vector z = decision_logits(Rollout{}).front();
    const int idx = sample_nucleus(z, decoding_.top_p, rng);
    Rollout r;
    r.prompt = prompt;
    r.actions = {idx};
    r.old_logprobs = {log_softmax(z)[idx]};
    r.text = render(static_cast<std::size_t>(idx), prompt);
    return r;
}

std::vector<Vector> TemplatePolicy::decision_logits(const Rollout&) const {
    Vector z = Eigen::Map<const Vector>(logits_.data(), static_cast<Eigen::Index>(logits_.size()));
    return {z / decoding_.temperature};
}

void TemplatePolicy::backward(const Rollout&, const std::vector<Vector>& dlogits, std::span<double> grad) const {
    if (dlogits.size() != 1 || grad.size() != logits_.size()) throw ShapeMismatch("template policy backward");
    for (std::size_t k = 0; k < logits_.size(); ++k) {
        grad[k] += dlogits[0][static_cast<Eigen::Index>(k)] / decoding_.temperature;
    }
}

std::string TemplatePolicy::continue_from(const std::string& prompt, const std::string& assistant_prefix,
                                          Rng&) const {
    if (prompt.find(kSolvabilityQuestion) != std::string::npos) {
        // yes when the templates that answer the believed label hold most of the mass
        const auto p = probabilities();
        const bool hinted = hint_label_in_prompt(prompt).has_value();
        const double right = p[0] + p[2] + p[3] + p[7] + (hinted ? 0.0 : p[5]);
        return right >= 0.5 ? " yes" : " no";
    }
    const auto options = options_in_prompt(strip_hint(prompt));
    const std::string thinking = prefix_thinking(assistant_prefix);
    AnswerLabel answer;
    std::size_t start = 0;
    while (start <= thinking.size()) {
        std::size_t end = thinking.find('\n', start);
        if (end == std::string::npos) end = thinking.size();
        const std::string_view line = std::string_view(thinking).substr(start, end - start);
        if (line.substr(0, kExecDirective.size()) == kExecDirective) {
            const std::string label(line.substr(kExecDirective.size()));
            for (const auto& o : options) {
                if (o.label == label) answer = AnswerLabel{label};
            }
        }
        start = end + 1;
    }
    if (!answer.parsed()) {
        const std::string believed = believed_answer(prompt);
        if (!believed.empty()) answer = AnswerLabel{believed};
    }
    return continuation(assistant_prefix, answer);
}

// ---------------------------------------------------------------------------
// TinyLMPolicy

TinyLMPolicy::TinyLMPolicy(TinyLM model, Tokenizer tokenizer, int max_new_tokens, std::string name)
    : model_(std::move(model)), tokenizer_(std::move(tokenizer)), max_new_tokens_(max_new_tokens),
      name_(std::move(name)) {
    if (static_cast<int>(tokenizer_.size()) != model_.config().vocab) {
        throw ShapeMismatch("tokenizer size does not match the model vocabulary");
    }
    if (max_new_tokens_ < 1) throw PreconditionError("max_new_tokens must be positive");
}

std::vector<int> TinyLMPolicy::prompt_tokens(const std::string& prompt) const {
    auto ids = tokenizer_.encode(prompt);
    ids.push_back(tokenizer_.id(kThinkOpen));
    return ids;
}

std::vector<int> TinyLMPolicy::generate_tokens(std::vector<int> context, Rng& rng, std::vector<double>* logprobs,
                                               bool* finished) const {
    std::vector<int> generated;
    *finished = false;
    const std::size_t prompt_len = context.size();
    for (int step = 0; step < max_new_tokens_; ++step) {
        if (static_cast<int>(context.size()) >= model_.config().max_len) break;
        const Matrix logits = model_.forward(context);
        Vector z = logits.row(logits.rows() - 1).transpose() / decoding_.temperature;
        if (logprobs) logprobs->push_back(0.0);  // filled below from the unpenalized distribution
        const Vector logp = log_softmax(z);
        Vector penalized = z;
        if (decoding_.repetition_penalty != 1.0) {
            for (std::size_t i = prompt_len; i < context.size(); ++i) {
                double& v = penalized[context[i]];
                v = v > 0 ? v / decoding_.repetition_penalty : v * decoding_.repetition_penalty;
            }
        }
        const int tok = sample_nucleus(penalized, decoding_.top_p, rng);
        if (logprobs) logprobs->back() = logp[tok];
        generated.push_back(tok);
        context.push_back(tok);
        if (tok == tokenizer_.eos()) {
            *finished = true;
            break;
        }
    }
    return generated;
}

Rollout TinyLMPolicy::sample(const std::string& prompt, Rng& rng) const {
    Rollout r;
    r.prompt = prompt;
    bool finished = false;
    const auto generated = generate_tokens(prompt_tokens(prompt), rng, &r.old_logprobs, &finished);
    r.actions = generated;
    r.failed = !finished;
    r.text = std::string(kThinkOpen) + tokenizer_.decode(generated);
    return r;
}

std::vector<Vector> TinyLMPolicy::decision_logits(const Rollout& rollout) const {
    if (rollout.actions.empty()) return {};
    std::vector<int> seq = prompt_tokens(rollout.prompt);
    const std::size_t prompt_len = seq.size();
    seq.insert(seq.end(), rollout.actions.begin(), rollout.actions.end() - 1);
    const Matrix logits = model_.forward(seq);
    std::vector<Vector> out;
    out.reserve(rollout.actions.size());
    for (std::size_t k = 0; k < rollout.actions.size(); ++k) {
        out.push_back(logits.row(static_cast<Eigen::Index>(prompt_len - 1 + k)).transpose() / decoding_.temperature);
    }
    return out;
}

void TinyLMPolicy::backward(const Rollout& rollout, const std::vector<Vector>& dlogits,
                            std::span<double> grad) const {
    if (rollout.actions.empty()) return;
    if (dlogits.size() != rollout.actions.size()) throw ShapeMismatch("tiny policy backward: decision count");
    std::vector<int> seq = prompt_tokens(rollout.prompt);
    const std::size_t prompt_len = seq.size();
    seq.insert(seq.end(), rollout.actions.begin(), rollout.actions.end() - 1);
    ForwardCache cache;
    model_.forward(seq, &cache);
    Matrix d = Matrix::Zero(static_cast<Eigen::Index>(seq.size()), model_.config().vocab);
    for (std::size_t k = 0; k < dlogits.size(); ++k) {
        d.row(static_cast<Eigen::Index>(prompt_len - 1 + k)) = dlogits[k].transpose() / decoding_.temperature;
    }
    ParamBundle g = model_.base().zeros_like();
    model_.backward(cache, d, &g, nullptr);
    const auto values = g.values();
    if (grad.size() != values.size()) throw ShapeMismatch("tiny policy backward: gradient size");
    for (std::size_t i = 0; i < values.size(); ++i) grad[i] += values[i];
}

std::string TinyLMPolicy::continue_from(const std::string& prompt, const std::string& assistant_prefix,
                                        Rng& rng) const {
    auto context = tokenizer_.encode(prompt);
    const auto prefix = tokenizer_.encode(assistant_prefix);
    context.insert(context.end(), prefix.begin(), prefix.end());
    bool finished = false;
    const auto generated = generate_tokens(std::move(context), rng, nullptr, &finished);
    return tokenizer_.decode(generated);
}

}  // namespace remul
