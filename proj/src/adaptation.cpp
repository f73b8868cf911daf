#include "taskadapt/adaptation.hpp"

#include <algorithm>
#include <set>

#include "taskadapt/errors.hpp"
#include "taskadapt/pool.hpp"

namespace taskadapt {

void ExperimentPlan::validate() const {
    env_config.validate();
    train_config.validate();
    if (alpha.size() < 2) throw ConfigError("alpha must contain at least 2 instructions");
    if (alpha.size() >= kNumInstructions)
        throw ConfigError("alpha must be smaller than the full instruction space");
    if (beta.empty()) throw ConfigError("beta must not be empty");
    if (std::set<Instruction>(alpha.begin(), alpha.end()).size() != alpha.size())
        throw ConfigError("alpha contains duplicate instructions");
    if (std::set<Instruction>(beta.begin(), beta.end()).size() != beta.size())
        throw ConfigError("beta contains duplicate instructions");
    if (n_adapt_steps < 1) throw ConfigError("n_adapt_steps must be >= 1");
}

const char* to_string(MatchDimension d) {
    switch (d) {
        case MatchDimension::Verb: return "verb";
        case MatchDimension::Object: return "object";
        default: return "color";
    }
}

bool dimension_matches(MatchDimension d, const Instruction& a, const Instruction& b) {
    switch (d) {
        case MatchDimension::Verb: return a.verb == b.verb;
        case MatchDimension::Object: return a.object == b.object;
        default: return a.color == b.color;
    }
}

std::uint64_t base_policy_seed(std::uint64_t master, const Instruction& instr) {
    return derive_seed(master, "base-policy", render(instr));
}

std::uint64_t adaptation_seed(std::uint64_t master, const Instruction& base,
                              const Instruction& transfer) {
    return derive_seed(master, "adaptation", render(base), render(transfer));
}

std::uint64_t scratch_seed(std::uint64_t master, const Instruction& transfer) {
    return derive_seed(master, "scratch", render(transfer));
}

std::vector<BasePolicyResult> train_base_policies(const ExperimentPlan& plan, int parallelism) {
    plan.validate();
    std::vector<BasePolicyResult> results(plan.alpha.size());
    std::vector<std::function<void()>> jobs;
    for (std::size_t i = 0; i < plan.alpha.size(); ++i) {
        jobs.emplace_back([&plan, &results, i]() {
            const Instruction instr = plan.alpha[i];
            TrainResult r = train(plan.env_config, instr, std::nullopt, plan.train_config,
                                  base_policy_seed(plan.master_seed, instr));
            results[i] = {instr, std::move(r.snapshot), r.stats.converged,
                          r.stats.final_success_rate, r.stats.steps_used, std::move(r.stats)};
        });
    }
    run_jobs(jobs, parallelism);
    if (std::none_of(results.begin(), results.end(),
                     [](const BasePolicyResult& r) { return r.converged; }))
        throw NoPoliciesConverged("no base policy reached the convergence criterion");
    return results;
}

AdaptationSample sample_adaptation(const PolicySnapshot& base, const Instruction& transfer,
                                   long n_steps, const EnvConfig& env_config,
                                   const TrainConfig& train_config, std::uint64_t seed) {
    if (n_steps < 1) throw ConfigError("adaptation requires n >= 1 steps");
    TrainConfig cfg = train_config;
    cfg.max_train_steps = n_steps;
    cfg.stop_on_convergence = false;  // run for exactly n steps
    // The restarted exploration schedule is compressed into the adaptation
    // budget so epsilon reaches its floor before the trailing window.
    cfg.epsilon_decay_steps = std::min(cfg.epsilon_decay_steps, n_steps);
    TrainResult r = train(env_config, transfer, base, cfg, seed);
    return {base.instruction, transfer, n_steps, r.stats.final_success_rate,
            std::move(r.stats.curve), seed};
}

std::vector<AdaptationSample> run_grid(const ExperimentPlan& plan,
                                       const std::vector<BasePolicyResult>& bases,
                                       const std::vector<Instruction>& transfers,
                                       int parallelism) {
    std::vector<std::pair<const PolicySnapshot*, Instruction>> cells;
    for (const BasePolicyResult& base : bases) {
        if (!base.converged || !base.snapshot) continue;  // failures recorded upstream
        for (const Instruction& transfer : transfers) cells.emplace_back(&*base.snapshot, transfer);
    }

    std::vector<AdaptationSample> samples(cells.size());
    std::vector<std::function<void()>> jobs;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        jobs.emplace_back([&plan, &cells, &samples, i]() {
            const auto& [base, transfer] = cells[i];
            samples[i] = sample_adaptation(
                *base, transfer, plan.n_adapt_steps, plan.env_config, plan.train_config,
                adaptation_seed(plan.master_seed, base->instruction, transfer));
        });
    }
    run_jobs(jobs, parallelism);

    std::sort(samples.begin(), samples.end(), [](const AdaptationSample& a, const AdaptationSample& b) {
        return std::pair(a.base_instruction, a.transfer_instruction) <
               std::pair(b.base_instruction, b.transfer_instruction);
    });
    return samples;
}

AdaptationSample run_scratch_baseline(const Instruction& transfer, long n_steps,
                                      const EnvConfig& env_config, const TrainConfig& train_config,
                                      std::uint64_t seed) {
    TrainConfig cfg = train_config;
    cfg.max_train_steps = n_steps;
    cfg.stop_on_convergence = false;
    cfg.epsilon_decay_steps = std::min(cfg.epsilon_decay_steps, n_steps);  // same budget as adaptation
    TrainResult r = train(env_config, transfer, std::nullopt, cfg, seed);
    AdaptationSample sample;
    sample.base_instruction = transfer;  // by convention scratch rows carry the transfer label
    sample.transfer_instruction = transfer;
    sample.n_steps = n_steps;
    sample.success_rate = r.stats.final_success_rate;
    sample.curve = std::move(r.stats.curve);
    sample.seed = seed;
    return sample;
}

std::vector<AdaptationSample> run_scratch_baselines(const std::vector<Instruction>& instructions,
                                                    long n_steps, const EnvConfig& env_config,
                                                    const TrainConfig& train_config,
                                                    std::uint64_t master_seed, int parallelism) {
    std::vector<AdaptationSample> samples(instructions.size());
    std::vector<std::function<void()>> jobs;
    for (std::size_t i = 0; i < instructions.size(); ++i) {
        jobs.emplace_back([&, i]() {
            samples[i] = run_scratch_baseline(instructions[i], n_steps, env_config, train_config,
                                              scratch_seed(master_seed, instructions[i]));
        });
    }
    run_jobs(jobs, parallelism);
    std::sort(samples.begin(), samples.end(), [](const AdaptationSample& a, const AdaptationSample& b) {
        return a.transfer_instruction < b.transfer_instruction;
    });
    return samples;
}

std::vector<ComparisonRecord> build_dataset(const std::vector<AdaptationSample>& samples) {
    // Group measured performance by transfer instruction.
    std::map<Instruction, std::vector<std::pair<Instruction, double>>> by_transfer;
    for (const AdaptationSample& s : samples)
        by_transfer[s.transfer_instruction].emplace_back(s.base_instruction, s.success_rate);

    std::vector<ComparisonRecord> records;
    for (auto& [z_x, perfs] : by_transfer) {
        std::sort(perfs.begin(), perfs.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        for (std::size_t i = 0; i < perfs.size(); ++i) {
            for (std::size_t j = i + 1; j < perfs.size(); ++j) {
                if (perfs[i].first == perfs[j].first) continue;
                if (perfs[i].second == perfs[j].second) continue;  // ties carry no label
                const int label = perfs[i].second > perfs[j].second ? 1 : 0;
                records.push_back({z_x, perfs[i].first, perfs[j].first, label});
                records.push_back({z_x, perfs[j].first, perfs[i].first, 1 - label});
            }
        }
    }
    std::sort(records.begin(), records.end(), [](const ComparisonRecord& a, const ComparisonRecord& b) {
        return std::tie(a.z_x, a.z_i, a.z_j) < std::tie(b.z_x, b.z_i, b.z_j);
    });
    return records;
}

MatchCurves group_curves(const std::vector<AdaptationSample>& samples, MatchDimension dimension,
                         const std::vector<AdaptationSample>& scratch) {
    if (samples.empty()) throw Error("group_curves requires at least one sample");

    MatchCurves out;
    out.dimension = dimension;
    for (const CurvePoint& p : samples.front().curve) out.steps.push_back(p.step);

    const std::size_t n_points = out.steps.size();
    std::vector<double> match_sum(n_points, 0.0), differ_sum(n_points, 0.0),
        overall_sum(n_points, 0.0), scratch_sum(n_points, 0.0);

    auto accumulate = [&](const AdaptationSample& s, std::vector<double>& sum) {
        if (s.curve.size() != n_points) throw Error("misaligned learning curves in group_curves");
        for (std::size_t i = 0; i < n_points; ++i) {
            if (s.curve[i].step != out.steps[i]) throw Error("misaligned learning curves in group_curves");
            sum[i] += s.curve[i].rolling_success;
        }
    };

    for (const AdaptationSample& s : samples) {
        accumulate(s, overall_sum);
        if (dimension_matches(dimension, s.base_instruction, s.transfer_instruction)) {
            accumulate(s, match_sum);
            ++out.match_count;
        } else {
            accumulate(s, differ_sum);
            ++out.differ_count;
        }
    }
    for (const AdaptationSample& s : scratch) accumulate(s, scratch_sum);

    auto mean_of = [&](const std::vector<double>& sum, int count) {
        std::vector<double> mean;
        if (count == 0) return mean;
        mean.reserve(n_points);
        for (double v : sum) mean.push_back(v / count);
        return mean;
    };
    out.match_mean = mean_of(match_sum, out.match_count);
    out.differ_mean = mean_of(differ_sum, out.differ_count);
    out.overall_mean = mean_of(overall_sum, out.match_count + out.differ_count);
    out.scratch_mean = mean_of(scratch_sum, static_cast<int>(scratch.size()));
    out.empty_partition = out.match_count == 0 || out.differ_count == 0;
    return out;
}

}  // namespace taskadapt
