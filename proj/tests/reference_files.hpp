#pragma once

// Writes record files in the ingestion format with the item counts of the
// reference benchmark releases, padded with records the loaders must drop.

#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "remul/datasets.hpp"

namespace remul::testing {

inline nlohmann::json reference_record(DatasetKind kind, std::size_t i, const std::string& task = {}) {
    using nlohmann::json;
    const std::string id = std::string(to_string(kind)) + "-" + std::to_string(i);
    switch (kind) {
        case DatasetKind::zlb:
            return {{"id", id}, {"puzzle", "Three houses stand in a row."}, {"question", "Who owns the cat?"},
                    {"options", {"Ann", "Bo", "Cy"}}, {"gold", "B"}};
        case DatasetKind::musr:
            return {{"id", id}, {"narrative", "A body was found."}, {"options", {"Mia", "Lee"}}, {"gold", "A"}};
        case DatasetKind::folio:
            return {{"id", id}, {"premises", "All cats purr."}, {"conclusion", "Tom purrs."}, {"gold", "True"}};
        default:
            return {{"id", id}, {"question", "Which is first?"}, {"options", {"x", "y", "z", "w"}}, {"gold", "C"},
                    {"task", task}};
    }
}

// Returns the path of a file that yields exactly `count` items under the
// matching DatasetSpec (BBEH drops free-form items, the BBH training split
// drops tasks outside the training filter).
inline std::filesystem::path write_reference_file(const std::filesystem::path& dir, const std::string& preset,
                                                  std::size_t count) {
    using nlohmann::json;
    std::filesystem::create_directories(dir);
    const auto path = dir / (preset + ".jsonl");
    std::ofstream out(path);
    const DatasetKind kind = preset == "bbh_train"     ? DatasetKind::bbh
                             : preset == "folio_train" ? DatasetKind::folio
                                                       : dataset_kind_from_string(preset);
    const auto& tasks = bbh_training_tasks();
    std::size_t written = 0;
    for (std::size_t i = 0; written < count; ++i) {
        if (kind == DatasetKind::bbeh && i % 4 == 3) {
            out << json{{"id", "free-" + std::to_string(i)}, {"type", "free_form"}, {"question", "Count."},
                        {"gold", "7"}}.dump()
                << "\n";
            continue;
        }
        if (kind == DatasetKind::bbh && i % 5 == 4) {
            out << reference_record(kind, i, "date_understanding").dump() << "\n";
            continue;
        }
        out << reference_record(kind, i, tasks[i % tasks.size()]).dump() << "\n";
        ++written;
    }
    return path;
}

inline DatasetSpec reference_spec(const std::string& preset, const std::filesystem::path& path) {
    DatasetSpec s;
    s.name = preset;
    s.kind = preset == "bbh_train"     ? DatasetKind::bbh
             : preset == "folio_train" ? DatasetKind::folio
                                       : dataset_kind_from_string(preset);
    s.split = preset.ends_with("_train") ? "train" : "test";
    s.path = path.string();
    s.expected_count = reference_count(preset);
    if (preset == "bbh_train") s.task_filter = bbh_training_tasks();
    return s;
}

}  // namespace remul::testing
