#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace remul {

inline constexpr std::string_view kThinkOpen = "<think>";
inline constexpr std::string_view kThinkClose = "</think>";

enum class DatasetKind { bbh, bbeh, zlb, musr, folio, synthetic };

std::string_view to_string(DatasetKind kind);
DatasetKind dataset_kind_from_string(std::string_view name);  // throws UnknownDataset

struct Option {
    std::string label;
    std::string text;

    bool operator==(const Option&) const = default;
};

// A parsed answer: an option label, or the UNPARSED sentinel (empty value).
class AnswerLabel {
public:
    AnswerLabel() = default;
    explicit AnswerLabel(std::string label) : value_(std::move(label)) {}

    static AnswerLabel unparsed() { return AnswerLabel{}; }

    bool parsed() const noexcept { return !value_.empty(); }
    const std::string& value() const noexcept { return value_; }
    std::string str() const { return parsed() ? value_ : std::string("UNPARSED"); }

    bool operator==(const AnswerLabel&) const = default;

private:
    std::string value_;
};

struct QAItem {
    std::string id;
    std::string prompt;                         // question body
    std::map<std::string, std::string> fields;  // dataset-specific template fields
    std::vector<Option> options;
    std::string gold;
    DatasetKind dataset = DatasetKind::synthetic;
    std::string task;

    const Option* find_option(std::string_view label) const;
    // Throws PreconditionError when the option list is empty, labels repeat,
    // or gold is not one of the labels.
    void validate() const;
};

enum class SplitMode { newline, sentence };

SplitMode split_mode_from_string(std::string_view name);
std::string_view step_delimiter(SplitMode mode);

struct ReasoningTrace {
    std::string raw;
    std::string thinking;
    std::vector<std::string> steps;
    std::string answer_text;
    AnswerLabel answer;
    SplitMode split_mode = SplitMode::newline;
    bool degraded = false;  // no think delimiters were present

    std::size_t n() const noexcept { return steps.size(); }
};

std::vector<std::string> split_steps(std::string_view thinking, SplitMode mode);

// Last-occurrence-wins scan over four patterns: "Option <L>", "answer is <L>"
// (also "answer: <L>"), a bare "<L>" line, and verbatim option text.
AnswerLabel extract_answer(std::string_view answer_text, const std::vector<Option>& options);

ReasoningTrace parse_trace(std::string_view raw, const std::vector<Option>& options,
                           SplitMode mode = SplitMode::newline);

std::string answer_sentence(std::string_view label);

// "<think>" + steps joined by "\n" + "</think>" + answer sentence.
std::string render_trace(const std::vector<std::string>& steps, std::string_view answer_label);

}  // namespace remul
