// remul: train / sft / eval / report entry point.
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "remul/error.hpp"
#include "remul/harness.hpp"

namespace {

struct Common {
    std::string config;
    remul::Overrides overrides;
};

void add_common(CLI::App* cmd, Common& c, bool needs_config) {
    auto* opt = cmd->add_option("--config", c.config, "INI run configuration");
    if (needs_config) opt->required()->check(CLI::ExistingFile);
    cmd->add_option_function<std::uint64_t>("--seed", [&c](const std::uint64_t& v) { c.overrides.seed = v; },
                                            "Base random seed");
    cmd->add_option_function<std::string>(
        "--out", [&c](const std::string& v) { c.overrides.out = std::filesystem::absolute(v).string(); },
        "Output root for run directories");
    cmd->add_option_function<std::string>("--datasets", [&c](const std::string& v) { c.overrides.datasets = v; },
                                          "Comma-separated dataset names");
    cmd->add_option_function<std::string>("--metrics", [&c](const std::string& v) { c.overrides.metrics = v; },
                                          "Comma-separated metric names (eval)");
    cmd->add_option_function<std::string>("--variant", [&c](const std::string& v) { c.overrides.variant = v; },
                                          "Reward variant (train)");
}

remul::RunConfig load(const Common& c) {
    auto config = remul::RunConfig::from_file(c.config);
    remul::apply_overrides(config, c.overrides);
    return config;
}

void print_run(const remul::RunRecord& r) {
    std::cout << "run " << r.run_id << " -> " << r.dir.string() << "\n" << r.summary;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Speaker-listener faithfulness training and evaluation"};
    app.require_subcommand(1);

    Common train_opts, sft_opts, eval_opts, report_opts;
    std::vector<std::string> report_runs;
    auto* train = app.add_subcommand("train", "GRPO training under a reward variant");
    auto* sft = app.add_subcommand("sft", "Answer-adapter finetuning and merge");
    auto* eval = app.add_subcommand("eval", "Faithfulness metrics over datasets");
    auto* report = app.add_subcommand("report", "Tables and curves for one or more runs");
    add_common(train, train_opts, true);
    add_common(sft, sft_opts, true);
    add_common(eval, eval_opts, true);
    add_common(report, report_opts, false);
    report->add_option("runs", report_runs, "Run ids or run directories")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << nlohmann::json{{"error", "UsageError"}, {"message", e.what()}}.dump() << "\n";
        return 2;
    }

    try {
        if (*train) print_run(remul::cmd_train(load(train_opts)));
        if (*sft) print_run(remul::cmd_sft(load(sft_opts)));
        if (*eval) print_run(remul::cmd_eval(load(eval_opts)));
        if (*report) {
            std::filesystem::path root = "runs";
            if (!report_opts.config.empty()) {
                auto config = load(report_opts);
                root = config.base_dir / config.get("run.out", "runs");
            }
            if (report_opts.overrides.out) root = *report_opts.overrides.out;
            const auto r = remul::cmd_report(report_runs, root);
            std::cout << r.table << "wrote " << r.csv.string() << " and " << r.curves.string() << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << remul::error_record(e) << "\n";
        return 1;
    }
    return 0;
}
