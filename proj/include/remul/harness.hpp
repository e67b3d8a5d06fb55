#pragma once

#include <cstdint>
#include <exception>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace remul {

// Flat "section.key" -> value map read from an INI file.
class RunConfig {
public:
    static RunConfig from_file(const std::filesystem::path& path);
    static RunConfig from_string(const std::string& text);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    std::string get(const std::string& key, const std::string& fallback = {}) const;
    double get_double(const std::string& key, double fallback) const;
    long long get_int(const std::string& key, long long fallback) const;
    std::vector<std::string> get_list(const std::string& key, const std::string& fallback = {}) const;
    void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

    // Canonical INI text (sections and keys sorted). Written into the run
    // directory; re-reading it reproduces the run.
    std::string to_ini() const;
    const std::map<std::string, std::string>& values() const noexcept { return values_; }

    // Relative paths in the config resolve against this directory.
    std::filesystem::path base_dir;

private:
    std::map<std::string, std::string> values_;
};

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> datasets;
    std::optional<std::string> metrics;
    std::optional<std::string> variant;
};

void apply_overrides(RunConfig& config, const Overrides& overrides);

struct RunRecord {
    std::string run_id;
    std::filesystem::path dir;
    std::string summary;  // contents of summary.csv
};

// Deterministic id: command plus a hash of the canonical config.
std::string make_run_id(const std::string& command, const RunConfig& config);

RunRecord cmd_train(const RunConfig& config);
RunRecord cmd_sft(const RunConfig& config);
RunRecord cmd_eval(const RunConfig& config);

struct ReportResult {
    std::string table;  // rendered markdown
    std::filesystem::path csv;
    std::filesystem::path curves;
};

// Runs resolve as directories under `out_root`, or as paths. One run renders
// absolute tables; two or more add percent deltas against the first.
ReportResult cmd_report(const std::vector<std::string>& runs, const std::filesystem::path& out_root);

// One-line JSON error record: {"error": kind, "message": ...}.
std::string error_record(const std::exception& e);

}  // namespace remul
