#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "taskadapt/gridworld.hpp"
#include "taskadapt/instructions.hpp"
#include "taskadapt/nn.hpp"
#include "taskadapt/rng.hpp"

namespace taskadapt {

enum class Backend : std::uint8_t { Tabular = 0, Neural = 1 };

const char* to_string(Backend b);
Backend backend_from_string(const std::string& s);

struct TrainConfig {
    Backend backend = Backend::Tabular;
    double gamma = 0.99;
    double learning_rate = 0.0;  // 0 -> backend default (0.1 tabular, 6.25e-5 neural)
    double adam_epsilon = 1.5e-4;
    int target_update_steps = 8000;
    long warmup_random_steps = 0;  // neural runs default to 1000 at desk scale
    long epsilon_decay_steps = 20000;
    double epsilon_min = 0.01;
    int batch_size = 32;
    long max_train_steps = 300000;
    double convergence_threshold = 0.95;
    int convergence_window = 100;
    long min_steps_before_convergence = 5000;
    bool stop_on_convergence = true;
    long replay_capacity = 100000;
    long log_interval = 1000;
    double eval_epsilon = 0.01;
    int hidden_size = 128;

    double effective_learning_rate() const {
        if (learning_rate > 0.0) return learning_rate;
        return backend == Backend::Tabular ? 0.1 : 6.25e-5;
    }
    void validate() const;
};

using QValues = std::array<double, kNumActions>;

// Greedy argmax with ties broken by lowest action index.
Action argmax_action(const QValues& values);

// With probability epsilon a uniform action, otherwise the greedy one.
Action act_epsilon_greedy(const QValues& values, double epsilon, Rng& rng);

// One-step Q-learning target.
double td_target(double reward, bool terminal, const QValues& next_values, double gamma);

// ---------------------------------------------------------------------------
// Tabular backend. States are keyed by a canonical serialization that
// relabels colors and object kinds relative to the policy's own instruction
// (the task's color/kind map to slot 0, the rest keep their declared order).
// Appearance does not affect the dynamics, so the relabeling is exact, and it
// is what lets a warm-started table carry over to a task that differs only in
// color or object.

struct TabularTransition {
    std::string key;
    Action action;
    double reward;
    std::string next_key;
    bool terminal;
};

class TabularQ {
public:
    TabularQ() = default;
    explicit TabularQ(const Instruction& task) : task_(task) {}

    const Instruction& task() const { return task_; }
    void retask(const Instruction& task) { task_ = task; }  // warm start re-keys lookups

    std::string canonical_key(const GridState& state) const;
    QValues values(const std::string& key) const;  // unseen states read as zeros

    // Per-transition update Q[s][a] += lr * (target - Q[s][a]); returns the
    // mean squared pre-update TD error over the batch.
    double learn_step(const std::vector<TabularTransition>& batch, double learning_rate,
                      double gamma);

    std::map<std::string, QValues> sorted_table() const;
    void load_table(const std::map<std::string, QValues>& table);
    std::size_t table_size() const { return table_.size(); }

    // Rewards in [0,1] bound tabular values by 1/(1-gamma); throws on violation.
    void check_value_bounds(double gamma) const;

private:
    Instruction task_{Verb::Goto, Color::Blue, ObjectKind::Box};
    std::unordered_map<std::string, QValues> table_;
};

// ---------------------------------------------------------------------------
// Neural backend: flattened one-hot observation -> 128 -> 128 -> 7, trained
// by DQN with a replay buffer and a periodically refreshed target network.

struct Transition {
    Observation obs;
    Action action;
    double reward;
    Observation next_obs;
    bool terminal;
};

class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {}

    void push(Transition t);
    std::size_t size() const { return buffer_.size(); }

    // Uniform sampling with replacement.
    std::vector<const Transition*> sample(std::size_t n, Rng& rng) const;

private:
    std::size_t capacity_;
    std::size_t next_ = 0;
    std::vector<Transition> buffer_;
};

QValues neural_values(const Mlp& net, const Observation& obs);

// Mean squared error between q(obs)[action] and the TD target, plus its
// gradient accumulated into `grad` (sized like net.params()).
double neural_batch_gradient(const Mlp& net, const Mlp& target,
                             const std::vector<const Transition*>& batch, double gamma,
                             std::vector<double>& grad);

// One Adam step on the batch loss; returns the pre-step loss. Throws
// NonFiniteLoss on divergence.
double neural_learn_step(Mlp& net, const Mlp& target, Adam& adam,
                         const std::vector<const Transition*>& batch, double gamma);

// ---------------------------------------------------------------------------

struct PolicySnapshot {
    Backend backend = Backend::Tabular;
    Instruction instruction{Verb::Goto, Color::Blue, ObjectKind::Box};
    EnvConfig env_config;
    long train_steps_used = 0;
    double final_success_rate = 0.0;
    bool converged = false;
    std::uint64_t seed = 0;
    std::map<std::string, QValues> table;  // tabular parameters, key-sorted
    std::vector<int> neural_dims;          // neural parameters
    std::vector<double> neural_params;
};

struct EpisodeLog {
    long episode;
    long env_steps;  // cumulative env steps at episode end
    double episode_return;
    bool success;
};

struct CurvePoint {
    long step;
    long episode;  // completed episodes at this step
    double rolling_success;
    double epsilon;
    double loss;
};

struct TrainStats {
    std::vector<EpisodeLog> episodes;
    std::vector<CurvePoint> curve;
    bool converged = false;
    double final_success_rate = 0.0;
    long steps_used = 0;
};

struct TrainResult {
    PolicySnapshot snapshot;
    TrainStats stats;
};

TrainResult train(const EnvConfig& env_config, const Instruction& task,
                  const std::optional<PolicySnapshot>& init, const TrainConfig& cfg,
                  std::uint64_t seed);

double evaluate(const PolicySnapshot& snapshot, const EnvConfig& env_config, int episodes,
                const TrainConfig& cfg, Rng& rng);

void save_snapshot(const PolicySnapshot& snapshot, const std::string& path);
PolicySnapshot load_snapshot(const std::string& path);

// Stable content hash, used for determinism checks and manifests.
std::uint64_t snapshot_hash(const PolicySnapshot& snapshot);

}  // namespace taskadapt
