#include "remul/rewards.hpp"

#include "remul/error.hpp"
#include "remul/faithfulness_eval.hpp"

namespace remul {

std::string_view to_string(RewardVariant variant) {
    switch (variant) {
        case RewardVariant::faithfulness_only: return "faithfulness_only";
        case RewardVariant::correctness_only: return "correctness_only";
        case RewardVariant::balanced: return "balanced";
        case RewardVariant::hint_optimized: return "hint_optimized";
    }
    return "faithfulness_only";
}

RewardVariant reward_variant_from_string(std::string_view name) {
    if (name == "faithfulness_only") return RewardVariant::faithfulness_only;
    if (name == "correctness_only") return RewardVariant::correctness_only;
    if (name == "balanced") return RewardVariant::balanced;
    if (name == "hint_optimized") return RewardVariant::hint_optimized;
    throw ConfigError("unknown reward variant '" + std::string(name) + "'");
}

bool uses_listeners(RewardVariant variant) {
    return variant == RewardVariant::faithfulness_only || variant == RewardVariant::balanced;
}

MatchResult match_reward(const VerdictMatrix& verdicts, const AnswerLabel& speaker_answer) {
    MatchResult result;
    result.matrix.rows = verdicts.rows();
    result.matrix.cols = verdicts.cols();
    result.matrix.cells.assign(verdicts.size(), 0);
    if (!speaker_answer.parsed()) return result;
    for (std::size_t c = 0; c < verdicts.size(); ++c) {
        const AnswerLabel& a = verdicts.cells()[c].answer;
        if (a.parsed() && a == speaker_answer) {
            result.matrix.cells[c] = 1;
            ++result.r_match;
        }
    }
    return result;
}

double balanced_reward(int r_match, const AnswerLabel& answer, const AnswerLabel& gold, int lambda) {
    if (lambda < 1) throw PreconditionError("lambda must equal the pool size (>= 1)");
    return static_cast<double>(r_match) + static_cast<double>(lambda * correctness_reward(answer, gold));
}

int correctness_reward(const AnswerLabel& answer, const AnswerLabel& gold) {
    return answer.parsed() && answer == gold ? 1 : 0;
}

int hint_reward(const ReasoningTrace& hinted_trace, bool answer_changed) {
    return answer_changed && detect_hint_citation(hinted_trace.raw) ? 1 : 0;
}

}  // namespace remul
