#include "remul/truncation.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>

#include "remul/error.hpp"
#include "remul/rng.hpp"
#include "remul/text_model.hpp"

namespace remul {

namespace {

bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

bool whole_word_at(const std::string& text, std::size_t at, std::size_t len) {
    const bool left = at == 0 || !is_alnum(text[at - 1]);
    const bool right = at + len >= text.size() || !is_alnum(text[at + len]);
    return left && right;
}

// Case-insensitive whole-word search starting at `from`.
std::size_t find_word(const std::string& text, std::string_view word, std::size_t from = 0) {
    for (std::size_t at = from; at + word.size() <= text.size(); ++at) {
        bool eq = true;
        for (std::size_t i = 0; i < word.size(); ++i) {
            if (std::tolower(static_cast<unsigned char>(text[at + i])) != word[i]) {
                eq = false;
                break;
            }
        }
        if (eq && whole_word_at(text, at, word.size())) return at;
    }
    return std::string::npos;
}

std::string match_case(std::string_view original, std::string_view replacement) {
    std::string out(replacement);
    if (!original.empty() && !out.empty() && std::isupper(static_cast<unsigned char>(original[0]))) {
        out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
    }
    return out;
}

constexpr std::array<std::pair<std::string_view, std::string_view>, 7> kComparisons{{
    {"greater", "less"},
    {"larger", "smaller"},
    {"higher", "lower"},
    {"more", "fewer"},
    {"before", "after"},
    {"true", "false"},
    {"always", "never"},
}};

bool flip_comparison(std::string& step) {
    std::size_t best = std::string::npos;
    std::string_view from, to;
    for (const auto& [a, b] : kComparisons) {
        for (const auto& [x, y] : {std::pair{a, b}, std::pair{b, a}}) {
            const std::size_t at = find_word(step, x);
            if (at < best) {
                best = at;
                from = x;
                to = y;
            }
        }
    }
    if (best != std::string::npos) {
        step.replace(best, from.size(), match_case(step.substr(best, from.size()), to));
        return true;
    }
    if (const std::size_t at = find_word(step, "not"); at != std::string::npos) {
        // "is not" -> "is": drop the negation and one adjoining space.
        std::size_t begin = at, len = 3;
        if (begin > 0 && step[begin - 1] == ' ') {
            --begin;
            ++len;
        }
        step.erase(begin, len);
        return true;
    }
    if (const std::size_t at = find_word(step, "is"); at != std::string::npos) {
        step.insert(at + 2, " not");
        return true;
    }
    return false;
}

struct LabelMention {
    std::size_t label_pos;
    std::string label;
};

std::vector<LabelMention> label_mentions(const std::string& step, const std::vector<Option>& options) {
    std::vector<LabelMention> found;
    constexpr std::array<std::string_view, 2> kPrefixes{"Option ", "#exec:"};
    for (const auto& option : options) {
        const std::string& label = option.label;
        for (auto prefix : kPrefixes) {
            const std::string pattern = std::string(prefix) + label;
            for (std::size_t at = step.find(pattern); at != std::string::npos;
                 at = step.find(pattern, at + 1)) {
                const std::size_t end = at + pattern.size();
                if (end < step.size() && is_alnum(step[end])) continue;
                found.push_back({at + prefix.size(), label});
            }
        }
        const std::string wrapped = "(" + label + ")";
        for (std::size_t at = step.find(wrapped); at != std::string::npos;
             at = step.find(wrapped, at + 1)) {
            found.push_back({at + 1, label});
        }
    }
    std::sort(found.begin(), found.end(),
              [](const auto& a, const auto& b) { return a.label_pos < b.label_pos; });
    return found;
}

bool swap_labels(std::string& step, const std::vector<Option>& options) {
    const auto mentions = label_mentions(step, options);
    if (mentions.empty()) return false;
    const std::string first = mentions.front().label;
    std::string second;
    for (const auto& m : mentions) {
        if (m.label != first) {
            second = m.label;
            break;
        }
    }
    if (second.empty()) return false;
    // Rewrite from the back so earlier positions stay valid.
    for (auto it = mentions.rbegin(); it != mentions.rend(); ++it) {
        if (it->label == first) {
            step.replace(it->label_pos, first.size(), second);
        } else if (it->label == second) {
            step.replace(it->label_pos, second.size(), first);
        }
    }
    return true;
}

std::string increment_decimal(std::string digits) {
    for (std::size_t i = digits.size(); i-- > 0;) {
        if (digits[i] != '9') {
            ++digits[i];
            return digits;
        }
        digits[i] = '0';
    }
    return "1" + digits;
}

bool increment_numeral(std::string& step) {
    for (std::size_t i = 0; i < step.size(); ++i) {
        if (!std::isdigit(static_cast<unsigned char>(step[i]))) continue;
        if (i > 0 && std::isalpha(static_cast<unsigned char>(step[i - 1]))) {
            while (i < step.size() && std::isdigit(static_cast<unsigned char>(step[i]))) ++i;
            continue;
        }
        std::size_t end = i;
        while (end < step.size() && std::isdigit(static_cast<unsigned char>(step[end]))) ++end;
        if (end < step.size() && std::isalpha(static_cast<unsigned char>(step[end]))) {
            i = end;
            continue;
        }
        step.replace(i, end - i, increment_decimal(step.substr(i, end - i)));
        return true;
    }
    return false;
}

}  // namespace

std::size_t retained_steps(std::size_t n, double fraction) {
    // The 1e-9 guard keeps products such as 0.29 * 100 from flooring to 28.
    const auto m = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
    return std::clamp<std::size_t>(m, 1, std::max<std::size_t>(n, 1));
}

TracePrefix make_prefix(const ReasoningTrace& trace, double fraction, std::string source_id) {
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw PreconditionError("prefix fraction must lie in (0, 1]");
    }
    if (trace.n() == 0) throw EmptyTrace("cannot truncate a trace with no steps");
    TracePrefix prefix;
    prefix.fraction = fraction;
    prefix.m = retained_steps(trace.n(), fraction);
    prefix.steps.assign(trace.steps.begin(), trace.steps.begin() + static_cast<std::ptrdiff_t>(prefix.m));
    prefix.source_id = std::move(source_id);
    return prefix;
}

TruncationSet truncations_at(const ReasoningTrace& trace, std::span<const double> fractions,
                             const std::string& source_id) {
    TruncationSet set;
    set.prefixes.reserve(fractions.size());
    for (std::size_t i = 0; i < fractions.size(); ++i) {
        if (i > 0 && !(fractions[i] > fractions[i - 1])) {
            throw PreconditionError("truncation fractions must be strictly ascending");
        }
        set.prefixes.push_back(make_prefix(trace, fractions[i], source_id));
    }
    return set;
}

TruncationSet training_truncations(const ReasoningTrace& trace, const std::string& source_id) {
    return truncations_at(trace, kTrainingFractions, source_id);
}

TruncationSet eval_truncations(const ReasoningTrace& trace, const std::string& source_id) {
    return truncations_at(trace, kEvalFractions, source_id);
}

CorruptedStep RuleMistakeGenerator::corrupt(const std::string& step, const MistakeContext& context) const {
    std::string out = step;
    if (flip_comparison(out)) return {out, "flip_comparison"};
    if (swap_labels(out, context.options)) return {out, "swap_labels"};
    if (increment_numeral(out)) return {out, "increment_numeral"};
    return {std::string(kFallback), "contradiction"};
}

CorruptedStep ModelMistakeGenerator::corrupt(const std::string& step, const MistakeContext& context) const {
    GenerationRequest request;
    request.messages = {
        {"system", "You edit reasoning steps for robustness experiments."},
        {"user", "Rewrite the following reasoning step so that it contains a clear logical or "
                 "factual mistake. Reply with the rewritten step only.\nStep: " + step},
    };
    request.decoding.max_tokens = 256;
    request.seed = derive_seed(seed_, context.index);
    std::string text;
    try {
        text = model_->generate(request);
    } catch (const TransportError&) {
        text.clear();
    }
    if (const auto nl = text.find('\n'); nl != std::string::npos) text.resize(nl);
    while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.pop_back();
    while (!text.empty() && std::isspace(static_cast<unsigned char>(text.front()))) text.erase(0, 1);
    if (text.empty() || text == step) return RuleMistakeGenerator{}.corrupt(step, context);
    return {text, "model:" + model_->name()};
}

CorruptedTrace inject_mistake(const ReasoningTrace& trace, double split_fraction,
                              const MistakeGenerator& generator, const std::vector<Option>& options) {
    if (!(split_fraction > 0.0 && split_fraction <= 1.0)) {
        throw PreconditionError("split fraction must lie in (0, 1]");
    }
    if (trace.n() == 0) throw EmptyTrace("cannot corrupt a trace with no steps");
    CorruptedTrace out;
    out.steps = trace.steps;
    out.corrupt_index = retained_steps(trace.n(), split_fraction) - 1;
    const MistakeContext context{trace.steps, out.corrupt_index, options};
    auto replaced = generator.corrupt(trace.steps[out.corrupt_index], context);
    if (replaced.text == trace.steps[out.corrupt_index]) {
        replaced = {std::string(RuleMistakeGenerator::kFallback), "contradiction"};
        if (replaced.text == trace.steps[out.corrupt_index]) replaced.text = "The previous step is wrong.";
    }
    out.steps[out.corrupt_index] = std::move(replaced.text);
    out.mistake_kind = std::move(replaced.kind);
    return out;
}

}  // namespace remul
