#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "remul/trace.hpp"

namespace remul {

class TextModel;

struct TracePrefix {
    double fraction = 1.0;   // as requested, not m/n
    std::size_t m = 0;       // retained step count
    std::vector<std::string> steps;
    std::string source_id;
};

struct TruncationSet {
    std::vector<TracePrefix> prefixes;  // ascending fraction, nested
};

inline constexpr double kTrainingFractions[] = {0.25, 0.50, 0.75};
inline constexpr double kEvalFractions[] = {0.2, 0.4, 0.6, 0.8, 1.0};

// m = max(1, floor(fraction * n)).
std::size_t retained_steps(std::size_t n, double fraction);

TracePrefix make_prefix(const ReasoningTrace& trace, double fraction, std::string source_id = {});
TruncationSet truncations_at(const ReasoningTrace& trace, std::span<const double> fractions,
                             const std::string& source_id = {});
TruncationSet training_truncations(const ReasoningTrace& trace, const std::string& source_id = {});
TruncationSet eval_truncations(const ReasoningTrace& trace, const std::string& source_id = {});

struct MistakeContext {
    const std::vector<std::string>& steps;
    std::size_t index;  // zero-based position of the step being corrupted
    const std::vector<Option>& options;
};

struct CorruptedStep {
    std::string text;
    std::string kind;
};

class MistakeGenerator {
public:
    virtual ~MistakeGenerator() = default;
    virtual CorruptedStep corrupt(const std::string& step, const MistakeContext& context) const = 0;
};

// Deterministic rewrite rules, tried in order: comparison/negation flip,
// option-label swap, numeral increment, contradictory fallback.
class RuleMistakeGenerator final : public MistakeGenerator {
public:
    static constexpr std::string_view kFallback = "Therefore the opposite holds.";
    CorruptedStep corrupt(const std::string& step, const MistakeContext& context) const override;
};

// Asks a text model to rewrite the step with an error; falls back to the
// rule generator when the model output is empty or identical to the input.
class ModelMistakeGenerator final : public MistakeGenerator {
public:
    explicit ModelMistakeGenerator(std::shared_ptr<const TextModel> model, std::uint64_t seed = 0)
        : model_(std::move(model)), seed_(seed) {}
    CorruptedStep corrupt(const std::string& step, const MistakeContext& context) const override;

private:
    std::shared_ptr<const TextModel> model_;
    std::uint64_t seed_;
};

struct CorruptedTrace {
    std::vector<std::string> steps;
    std::size_t corrupt_index = 0;  // zero-based; equals max(1, floor(f*n)) - 1
    std::string mistake_kind;
};

CorruptedTrace inject_mistake(const ReasoningTrace& trace, double split_fraction,
                              const MistakeGenerator& generator, const std::vector<Option>& options);

}  // namespace remul
