#include <doctest.h>

#include <random>

#include "remul/error.hpp"
#include "remul/rewards.hpp"

using namespace remul;

namespace {

VerdictMatrix matrix_of(const std::vector<std::vector<std::string>>& labels) {
    VerdictMatrix m(labels.size(), labels.at(0).size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        for (std::size_t j = 0; j < labels[i].size(); ++j) {
            m.at(i, j).answer = labels[i][j].empty() ? AnswerLabel::unparsed() : AnswerLabel{labels[i][j]};
        }
    }
    return m;
}

}  // namespace

TEST_CASE("match_reward examples") {
    const AnswerLabel b{"B"};
    CHECK(match_reward(matrix_of({{"B", "B", "B"}, {"B", "B", "B"}, {"B", "B", "B"}}), b).r_match == 9);
    CHECK(match_reward(matrix_of({{"A", "C", "D"}, {"A", "A", "A"}, {"C", "", "D"}}), b).r_match == 0);
    // one-based cells {(1,1),(1,2),(2,1),(3,3),(2,3)}
    const auto r = match_reward(matrix_of({{"B", "B", "A"}, {"B", "C", "B"}, {"A", "D", "B"}}), b);
    CHECK(r.r_match == 5);
    CHECK(r.matrix.at(0, 0));
    CHECK(r.matrix.at(0, 1));
    CHECK(r.matrix.at(1, 0));
    CHECK(r.matrix.at(2, 2));
    CHECK(r.matrix.at(1, 2));
    CHECK_FALSE(r.matrix.at(0, 2));
}

TEST_CASE("UNPARSED never matches") {
    CHECK(match_reward(matrix_of({{"", ""}}), AnswerLabel::unparsed()).r_match == 0);
    CHECK(match_reward(matrix_of({{"A", "A"}}), AnswerLabel::unparsed()).r_match == 0);
}

TEST_CASE("match_reward against brute force, bounds, monotonicity") {
    std::mt19937_64 rng(17);
    const std::string labels[] = {"A", "B", "C", "D", ""};
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t rows = 1 + rng() % 5, cols = 1 + rng() % 6;
        std::vector<std::vector<std::string>> cells(rows, std::vector<std::string>(cols));
        for (auto& row : cells)
            for (auto& c : row) c = labels[rng() % 5];
        const AnswerLabel speaker = rng() % 6 == 0 ? AnswerLabel::unparsed() : AnswerLabel{labels[rng() % 4]};
        int count = 0;
        for (const auto& row : cells)
            for (const auto& c : row) count += speaker.parsed() && c == speaker.value();
        const auto r = match_reward(matrix_of(cells), speaker);
        CHECK(r.r_match == count);
        CHECK(r.r_match >= 0);
        CHECK(r.r_match <= static_cast<int>(rows * cols));
        if (speaker.parsed()) {
            for (std::size_t i = 0; i < rows; ++i) {
                for (std::size_t j = 0; j < cols; ++j) {
                    if (cells[i][j] == speaker.value()) continue;
                    auto flipped = cells;
                    flipped[i][j] = speaker.value();
                    CHECK(match_reward(matrix_of(flipped), speaker).r_match == count + 1);
                }
            }
        }
    }
}

TEST_CASE("balanced_reward") {
    const AnswerLabel a{"A"}, b{"B"};
    CHECK(balanced_reward(9, b, b, 3) == 12);
    CHECK(balanced_reward(0, a, b, 3) == 0);
    CHECK(balanced_reward(4, a, b, 3) == 4);
    CHECK(balanced_reward(4, AnswerLabel::unparsed(), b, 3) == 4);
    CHECK_THROWS_AS(balanced_reward(1, a, a, 0), PreconditionError);
}

TEST_CASE("correctness_reward") {
    CHECK(correctness_reward(AnswerLabel{"B"}, AnswerLabel{"B"}) == 1);
    CHECK(correctness_reward(AnswerLabel{"A"}, AnswerLabel{"B"}) == 0);
    CHECK(correctness_reward(AnswerLabel::unparsed(), AnswerLabel{"B"}) == 0);
}

TEST_CASE("hint_reward") {
    ReasoningTrace cited;
    cited.raw = "<think>You said it was B, so B.</think>Answer: Option B";
    ReasoningTrace silent;
    silent.raw = "<think>Working it out gives B.</think>Answer: Option B";
    CHECK(hint_reward(cited, true) == 1);
    CHECK(hint_reward(silent, true) == 0);
    CHECK(hint_reward(cited, false) == 0);
}

TEST_CASE("variant names") {
    for (auto v : {RewardVariant::faithfulness_only, RewardVariant::correctness_only, RewardVariant::balanced,
                   RewardVariant::hint_optimized}) {
        CHECK(reward_variant_from_string(to_string(v)) == v);
    }
    CHECK(uses_listeners(RewardVariant::balanced));
    CHECK_FALSE(uses_listeners(RewardVariant::hint_optimized));
    CHECK_THROWS_AS(reward_variant_from_string("length"), ConfigError);
}
