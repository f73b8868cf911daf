#pragma once

#include <optional>
#include <string>
#include <vector>

#include "taskadapt/instructions.hpp"
#include "taskadapt/learner.hpp"

namespace taskadapt {

struct ExperimentPlan {
    std::vector<Instruction> alpha;  // k base instructions
    std::vector<Instruction> beta;   // p transfer instructions
    long n_adapt_steps = 20000;
    std::uint64_t master_seed = 0;
    EnvConfig env_config;
    TrainConfig train_config;

    void validate() const;
};

struct AdaptationSample {
    Instruction base_instruction{Verb::Goto, Color::Blue, ObjectKind::Box};
    Instruction transfer_instruction{Verb::Goto, Color::Blue, ObjectKind::Box};
    long n_steps = 0;
    double success_rate = 0.0;  // trailing-window success after n steps
    std::vector<CurvePoint> curve;
    std::uint64_t seed = 0;
};

struct ComparisonRecord {
    Instruction z_x{Verb::Goto, Color::Blue, ObjectKind::Box};
    Instruction z_i{Verb::Goto, Color::Blue, ObjectKind::Box};
    Instruction z_j{Verb::Goto, Color::Blue, ObjectKind::Box};
    int label = 0;
    friend bool operator==(const ComparisonRecord&, const ComparisonRecord&) = default;
};

enum class MatchDimension { Verb, Object, Color };

const char* to_string(MatchDimension d);
bool dimension_matches(MatchDimension d, const Instruction& a, const Instruction& b);

struct MatchCurves {
    MatchDimension dimension = MatchDimension::Verb;
    std::vector<long> steps;  // shared step grid (empty when inputs misalign)
    std::vector<double> match_mean;
    std::vector<double> differ_mean;
    std::vector<double> overall_mean;
    std::vector<double> scratch_mean;  // empty when no scratch baselines given
    int match_count = 0;
    int differ_count = 0;
    bool empty_partition = false;
};

struct BasePolicyResult {
    Instruction instruction{Verb::Goto, Color::Blue, ObjectKind::Box};
    std::optional<PolicySnapshot> snapshot;  // empty when training failed outright
    bool converged = false;
    double final_success_rate = 0.0;
    long steps_used = 0;
    TrainStats stats;
};

// Per-policy seeds derive from (master seed, role, instruction) so that
// results are identical whether cells run serially or in parallel.
std::uint64_t base_policy_seed(std::uint64_t master, const Instruction& instr);
std::uint64_t adaptation_seed(std::uint64_t master, const Instruction& base,
                              const Instruction& transfer);
std::uint64_t scratch_seed(std::uint64_t master, const Instruction& transfer);

std::vector<BasePolicyResult> train_base_policies(const ExperimentPlan& plan, int parallelism = 1);

AdaptationSample sample_adaptation(const PolicySnapshot& base, const Instruction& transfer,
                                   long n_steps, const EnvConfig& env_config,
                                   const TrainConfig& train_config, std::uint64_t seed);

// One sample per (converged base, transfer) pair, canonically sorted by
// (base, transfer). `transfers` defaults to plan.beta; pass enumerate_all()
// to collect holdout ground truth.
std::vector<AdaptationSample> run_grid(const ExperimentPlan& plan,
                                       const std::vector<BasePolicyResult>& bases,
                                       const std::vector<Instruction>& transfers,
                                       int parallelism = 1);

AdaptationSample run_scratch_baseline(const Instruction& transfer, long n_steps,
                                      const EnvConfig& env_config, const TrainConfig& train_config,
                                      std::uint64_t seed);

std::vector<AdaptationSample> run_scratch_baselines(const std::vector<Instruction>& instructions,
                                                    long n_steps, const EnvConfig& env_config,
                                                    const TrainConfig& train_config,
                                                    std::uint64_t master_seed, int parallelism = 1);

// Symmetrized pairwise dataset: for every transfer instruction and unordered
// base pair with differing performance, both orderings are emitted; ties are
// skipped. Output is canonically sorted.
std::vector<ComparisonRecord> build_dataset(const std::vector<AdaptationSample>& samples);

MatchCurves group_curves(const std::vector<AdaptationSample>& samples, MatchDimension dimension,
                         const std::vector<AdaptationSample>& scratch = {});

}  // namespace taskadapt
