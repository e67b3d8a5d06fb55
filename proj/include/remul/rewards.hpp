#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "remul/listeners.hpp"
#include "remul/trace.hpp"

namespace remul {

enum class RewardVariant { faithfulness_only, correctness_only, balanced, hint_optimized };

std::string_view to_string(RewardVariant variant);
RewardVariant reward_variant_from_string(std::string_view name);  // throws ConfigError
bool uses_listeners(RewardVariant variant);

struct MatchMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<char> cells;  // row-major, 1 = listener answer equals speaker answer

    bool at(std::size_t i, std::size_t j) const { return cells.at(i * cols + j) != 0; }
};

struct MatchResult {
    MatchMatrix matrix;
    int r_match = 0;
};

// r_match = sum over listeners and prefixes of [a_j^i == a]. UNPARSED on
// either side never matches.
MatchResult match_reward(const VerdictMatrix& verdicts, const AnswerLabel& speaker_answer);

// r_match + lambda * [answer == gold].
double balanced_reward(int r_match, const AnswerLabel& answer, const AnswerLabel& gold, int lambda);

int correctness_reward(const AnswerLabel& answer, const AnswerLabel& gold);

// 1 iff the hinted answer changed and the output cites the hint.
int hint_reward(const ReasoningTrace& hinted_trace, bool answer_changed);

struct RewardRecord {
    RewardVariant variant = RewardVariant::faithfulness_only;
    MatchMatrix match_matrix;
    int r_match = 0;
    bool correct = false;
    int lambda = 0;
    double r_bal = 0.0;
    double total = 0.0;  // the scalar the optimizer sees for this variant
};

}  // namespace remul
