// taskadapt: file-based experiment pipeline CLI.
//
// Subcommands mirror the pipeline stages; each reads its inputs from and
// writes its outputs to the run's output directory, so stages can be rerun
// and resumed independently.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "taskadapt/errors.hpp"
#include "taskadapt/pipeline.hpp"

namespace {

// Exit codes: 0 success, 2 config/usage, 3 missing artifact, 4 degenerate
// data, 5 numeric failure, 1 anything else.
int exit_code_for(const taskadapt::Error& e) {
    using namespace taskadapt;
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const MalformedInstruction*>(&e) ||
        dynamic_cast<const InsufficientPopulation*>(&e))
        return 2;
    if (dynamic_cast<const MissingArtifact*>(&e) || dynamic_cast<const CorruptSnapshot*>(&e) ||
        dynamic_cast<const VersionMismatch*>(&e))
        return 3;
    if (dynamic_cast<const DegenerateDataset*>(&e) || dynamic_cast<const NoPoliciesConverged*>(&e))
        return 4;
    if (dynamic_cast<const NonFiniteLoss*>(&e)) return 5;
    return 1;
}

struct CliOptions {
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<int> parallelism;
    std::optional<std::string> backend;
    bool force = false;
    bool synthetic = false;
};

void add_common_flags(CLI::App* cmd, CliOptions& opts) {
    cmd->add_option("--config", opts.config_path, "Key=value config file");
    cmd->add_option("--out", opts.out_dir, "Output directory (default: out)");
    cmd->add_option("--seed", opts.seed, "Master seed override");
    cmd->add_option("--parallel", opts.parallelism, "Worker threads (default: 1)");
    cmd->add_flag("--force", opts.force, "Overwrite existing artifacts");
}

taskadapt::RunConfig resolve_config(const CliOptions& opts) {
    taskadapt::RunConfig cfg = taskadapt::load_run_config(
        opts.config_path.empty() ? std::nullopt : std::optional(opts.config_path));
    if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
    if (opts.seed) cfg.seed = *opts.seed;
    if (opts.parallelism) cfg.parallelism = *opts.parallelism;
    if (opts.backend) taskadapt::apply_config_entry(cfg, "backend", *opts.backend);
    cfg.force = opts.force;
    if (opts.synthetic) cfg.synthetic = true;
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Task-adaptation experiment pipeline"};
    app.require_subcommand(1);

    CliOptions opts;
    std::string backend_flag;

    CLI::App* train_base = app.add_subcommand("train-base", "Train the k base policies");
    add_common_flags(train_base, opts);
    train_base->add_option("--backend", backend_flag, "Learner backend: tabular or neural");

    CLI::App* sample = app.add_subcommand("sample", "Sample warm-started adaptations");
    add_common_flags(sample, opts);

    CLI::App* build_dataset = app.add_subcommand("build-dataset", "Build the pairwise comparison dataset");
    add_common_flags(build_dataset, opts);

    CLI::App* train_transfer = app.add_subcommand("train-transfer", "Train the transfer classifier");
    add_common_flags(train_transfer, opts);
    train_transfer->add_flag("--synthetic", opts.synthetic,
                             "Train on the synthetic verb-dominance dataset instead of sampled data");

    CLI::App* grid = app.add_subcommand("grid", "Accuracy grid over (k, p) cells");
    add_common_flags(grid, opts);

    CLI::App* report = app.add_subcommand("report", "Grouped adaptation curves and plots");
    add_common_flags(report, opts);

    CLI::App* select = app.add_subcommand("select", "Rank base policies for an instruction");
    std::string model_path, instruction_text, snapshots_dir;
    select->add_option("--model", model_path, "Trained classifier (.tmod)")->required();
    select->add_option("--instruction", instruction_text, "Target instruction text")->required();
    select->add_option("--snapshots", snapshots_dir, "Directory of base policy .snap files")->required();

    CLI::App* rollout = app.add_subcommand("rollout", "Debug: replay a shortest plan on one episode");
    add_common_flags(rollout, opts);
    std::string rollout_instruction;
    bool render_flag = false;
    rollout->add_option("--instruction", rollout_instruction, "Task instruction")->required();
    rollout->add_flag("--render", render_flag, "Print a text rendering of the start state");

    CLI11_PARSE(app, argc, argv);

    try {
        if (!backend_flag.empty()) opts.backend = backend_flag;

        if (train_base->parsed()) {
            taskadapt::stage_train_base(resolve_config(opts));
        } else if (sample->parsed()) {
            taskadapt::stage_sample(resolve_config(opts));
        } else if (build_dataset->parsed()) {
            taskadapt::stage_build_dataset(resolve_config(opts));
        } else if (train_transfer->parsed()) {
            const taskadapt::TransferSummary summary =
                taskadapt::stage_train_transfer(resolve_config(opts));
            std::cout << "holdout accuracy " << taskadapt::format_fixed(summary.mean) << " +- "
                      << taskadapt::format_fixed(summary.stddev) << " (" << summary.holdout_source
                      << ")\n";
        } else if (grid->parsed()) {
            const taskadapt::RunConfig cfg = resolve_config(opts);
            taskadapt::stage_grid(cfg, {cfg.grid_k, cfg.grid_p, cfg.grid_runs});
        } else if (report->parsed()) {
            taskadapt::stage_report(resolve_config(opts));
        } else if (select->parsed()) {
            const auto ranking = taskadapt::run_select(model_path, instruction_text, snapshots_dir);
            for (const taskadapt::RankedBase& r : ranking) {
                std::cout << taskadapt::render(r.instruction) << " wins=" << r.wins
                          << " mean_win_prob=" << taskadapt::format_fixed(r.mean_win_probability)
                          << "\n";
            }
        } else if (rollout->parsed()) {
            const taskadapt::RunConfig cfg = resolve_config(opts);
            std::cout << taskadapt::rollout_trajectory(cfg, taskadapt::parse(rollout_instruction),
                                                       taskadapt::derive_seed(cfg.seed, "rollout"),
                                                       render_flag);
        }
    } catch (const taskadapt::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
