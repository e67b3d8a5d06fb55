#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "remul/trace.hpp"

namespace remul {

struct DatasetSpec {
    std::string name;
    DatasetKind kind = DatasetKind::synthetic;
    std::string split = "test";
    std::string path;
    std::optional<std::size_t> expected_count;
    std::vector<std::string> task_filter;  // prefix match on the record's task
};

// Item counts of the full benchmark releases used in the reference setup.
namespace reference_counts {
inline constexpr std::size_t bbh_train = 1250;
inline constexpr std::size_t bbeh = 120;
inline constexpr std::size_t zlb = 3259;
inline constexpr std::size_t folio = 202;
inline constexpr std::size_t musr = 250;
inline constexpr std::size_t folio_train = 1000;
}  // namespace reference_counts

// Named presets: "bbh_train", "bbeh", "zlb", "folio", "musr", "folio_train".
// Returns nullopt for anything else.
std::optional<std::size_t> reference_count(std::string_view preset);

// The five chain-of-thought-friendly BBH training tasks.
const std::vector<std::string>& bbh_training_tasks();

// Reads one JSON object per line. Non-multiple-choice BBEH records are
// skipped; every other malformed record raises SchemaError with its line.
std::vector<QAItem> parse_records(std::istream& in, const DatasetSpec& spec);
std::vector<QAItem> load_dataset(const DatasetSpec& spec);  // throws CountMismatch

std::string format_options(const std::vector<Option>& options);
std::string build_prompt(const QAItem& item);
std::string build_hint_prompt(const QAItem& item);
std::string hint_suffix(const QAItem& item);

// Label named by an injected hint line, if the prompt carries one.
std::optional<std::string> hint_label_in_prompt(std::string_view prompt);

struct SyntheticTask {
    std::vector<QAItem> items;
    std::vector<std::string> gold_traces;  // canonical trace text per item
    std::vector<bool> executable;          // gold trace carries a directive
};

// Small addition questions with four numeric options.
SyntheticTask make_synthetic_task(std::size_t size, double executable_ratio, std::uint64_t seed);

}  // namespace remul
