#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "taskadapt/adaptation.hpp"
#include "taskadapt/transfer.hpp"

namespace taskadapt {

inline constexpr const char* kSoftwareVersion = "0.1.0";

// Resolved configuration for a pipeline run. Loaded from a flat key=value
// file, then overridden by TASKADAPT_* environment variables and CLI flags;
// the resolved form is written back into the output directory verbatim.
struct RunConfig {
    std::uint64_t seed = 1;
    std::string out_dir = "out";
    int parallelism = 1;
    bool force = false;
    bool synthetic = false;

    // Experiment plan.
    int k = 4;
    int p = 6;
    std::vector<Instruction> alpha;  // empty -> sampled from the master seed
    std::vector<Instruction> beta;
    long n_adapt_steps = 20000;
    bool extended_grid = true;      // also sample Z \ beta for holdout ground truth
    bool scratch_baselines = true;  // from-scratch curves for the report

    EnvConfig env;
    TrainConfig train;
    ClassifierConfig classifier;
    int classifier_runs = 5;

    // Accuracy-grid driver.
    std::vector<int> grid_k = {8};
    std::vector<int> grid_p = {8};
    int grid_runs = 5;

    void validate() const;
};

// Key=value assignment; unknown keys raise ConfigError.
void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value);

// Parse a flat key=value file ('#' comments, blank lines allowed), then apply
// TASKADAPT_<KEY> environment overrides.
RunConfig load_run_config(const std::optional<std::string>& path);

// Canonical text form of the resolved config (stable key order).
std::string config_text(const RunConfig& cfg);

// Alpha/beta resolved: explicit lists when given, otherwise sampled
// uniformly without replacement from the master seed.
ExperimentPlan make_plan(const RunConfig& cfg);

// ---------------------------------------------------------------------------
// Pipeline stages. Each communicates with the next only via files under
// cfg.out_dir and updates manifest.json. All throw on failure; the CLI maps
// exception types to exit codes.

void stage_train_base(const RunConfig& cfg);
void stage_sample(const RunConfig& cfg);
void stage_build_dataset(const RunConfig& cfg);

struct TransferSummary {
    std::vector<double> accuracies;  // one per classifier run
    double mean = 0.0;
    double stddev = 0.0;
    std::string holdout_source;  // "extended-grid", "beta-split", or "synthetic"
};

TransferSummary stage_train_transfer(const RunConfig& cfg);

struct AccuracyGridSpec {
    std::vector<int> k_values;
    std::vector<int> p_values;
    int runs = 5;
};

void stage_grid(const RunConfig& cfg, const AccuracyGridSpec& spec);
void stage_report(const RunConfig& cfg);

std::vector<RankedBase> run_select(const std::string& model_path, const std::string& instruction_text,
                                   const std::string& snapshots_dir);

// One full in-memory pipeline pass (bases -> extended grid -> classifier),
// returning holdout accuracy; used by the accuracy-grid driver.
double run_pipeline_once(const RunConfig& cfg, int k, int p, std::uint64_t master_seed);

// Debug rollout: seeded reset, BFS plan replay, JSON-lines trajectory, and an
// optional text rendering of the start state.
std::string rollout_trajectory(const RunConfig& cfg, const Instruction& task, std::uint64_t seed,
                               bool render);

// Shared helpers for artifact formatting.
std::string format_fixed(double v, int decimals = 6);

}  // namespace taskadapt
