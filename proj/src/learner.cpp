#include "taskadapt/learner.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "taskadapt/errors.hpp"

namespace taskadapt {

const char* to_string(Backend b) { return b == Backend::Tabular ? "tabular" : "neural"; }

Backend backend_from_string(const std::string& s) {
    if (s == "tabular") return Backend::Tabular;
    if (s == "neural") return Backend::Neural;
    throw ConfigError("unknown backend '" + s + "' (expected tabular|neural)");
}

void TrainConfig::validate() const {
    if (gamma <= 0.0 || gamma > 1.0) throw ConfigError("gamma must be in (0, 1]");
    if (epsilon_min <= 0.0 || epsilon_min > 1.0) throw ConfigError("epsilon_min must be in (0, 1]");
    if (convergence_window < 1) throw ConfigError("convergence_window must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (max_train_steps < 0) throw ConfigError("max_train_steps must be >= 0");
    if (log_interval < 1) throw ConfigError("log_interval must be >= 1");
    if (learning_rate < 0.0) throw ConfigError("learning_rate must be >= 0");
}

Action argmax_action(const QValues& values) {
    int best = 0;
    for (int a = 1; a < kNumActions; ++a)
        if (values[static_cast<std::size_t>(a)] > values[static_cast<std::size_t>(best)]) best = a;
    return static_cast<Action>(best);
}

Action act_epsilon_greedy(const QValues& values, double epsilon, Rng& rng) {
    if (rng.uniform01() < epsilon) return static_cast<Action>(rng.bounded(kNumActions));
    return argmax_action(values);
}

double td_target(double reward, bool terminal, const QValues& next_values, double gamma) {
    if (terminal) return reward;
    return reward + gamma * *std::max_element(next_values.begin(), next_values.end());
}

// --- tabular -----------------------------------------------------------------

namespace {

inline int relabel(int value, int task_value) {
    if (value == task_value) return 0;
    return value < task_value ? value + 1 : value;
}

}  // namespace

std::string TabularQ::canonical_key(const GridState& state) const {
    const int task_color = static_cast<int>(task_.color);
    const int task_kind = static_cast<int>(task_.object);
    std::string key;
    key.reserve(4 + state.objects.size() * 4);
    key.push_back(static_cast<char>(state.agent_x));
    key.push_back(static_cast<char>(state.agent_y));
    key.push_back(static_cast<char>(state.agent_dir));
    if (state.carrying) {
        const int c = relabel(static_cast<int>(state.carrying->first), task_color);
        const int k = relabel(static_cast<int>(state.carrying->second), task_kind);
        key.push_back(static_cast<char>(1 + c * kNumObjectKinds + k));
    } else {
        key.push_back('\0');
    }
    std::vector<Object> sorted = state.objects;
    std::sort(sorted.begin(), sorted.end(),
              [](const Object& a, const Object& b) { return std::tie(a.x, a.y) < std::tie(b.x, b.y); });
    for (const Object& o : sorted) {
        key.push_back(static_cast<char>(o.x));
        key.push_back(static_cast<char>(o.y));
        key.push_back(static_cast<char>(relabel(static_cast<int>(o.color), task_color)));
        key.push_back(static_cast<char>(relabel(static_cast<int>(o.kind), task_kind)));
    }
    return key;
}

QValues TabularQ::values(const std::string& key) const {
    const auto it = table_.find(key);
    if (it == table_.end()) return QValues{};
    return it->second;
}

double TabularQ::learn_step(const std::vector<TabularTransition>& batch, double learning_rate,
                            double gamma) {
    double sq_error = 0.0;
    for (const TabularTransition& t : batch) {
        const double target = td_target(t.reward, t.terminal, values(t.next_key), gamma);
        QValues& row = table_[t.key];
        const double td = target - row[static_cast<std::size_t>(t.action)];
        row[static_cast<std::size_t>(t.action)] += learning_rate * td;
        sq_error += td * td;
    }
    const double loss = sq_error / static_cast<double>(batch.size());
    if (!std::isfinite(loss)) throw NonFiniteLoss("tabular TD error diverged");
    return loss;
}

std::map<std::string, QValues> TabularQ::sorted_table() const {
    return {table_.begin(), table_.end()};
}

void TabularQ::load_table(const std::map<std::string, QValues>& table) {
    table_.clear();
    table_.insert(table.begin(), table.end());
}

void TabularQ::check_value_bounds(double gamma) const {
    const double upper = 1.0 / (1.0 - gamma) + 1e-9;
    for (const auto& [key, row] : table_) {
        for (double v : row) {
            if (!(v >= -1e-9 && v <= upper))
                throw Error("tabular Q-value " + std::to_string(v) + " outside [0, 1/(1-gamma)]");
        }
    }
}

// --- neural ------------------------------------------------------------------

void ReplayBuffer::push(Transition t) {
    if (buffer_.size() < capacity_) {
        buffer_.push_back(std::move(t));
    } else {
        buffer_[next_] = std::move(t);
    }
    next_ = (next_ + 1) % capacity_;
}

std::vector<const Transition*> ReplayBuffer::sample(std::size_t n, Rng& rng) const {
    std::vector<const Transition*> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(&buffer_[rng.bounded(buffer_.size())]);
    return out;
}

QValues neural_values(const Mlp& net, const Observation& obs) {
    const std::vector<double> raw = net.forward(obs);
    QValues out{};
    for (int a = 0; a < kNumActions; ++a) out[static_cast<std::size_t>(a)] = raw[static_cast<std::size_t>(a)];
    return out;
}

double neural_batch_gradient(const Mlp& net, const Mlp& target,
                             const std::vector<const Transition*>& batch, double gamma,
                             std::vector<double>& grad) {
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;
    for (const Transition* t : batch) {
        Mlp::Trace trace;
        const std::vector<double> q = net.forward(t->obs, trace);
        const double y = td_target(t->reward, t->terminal, neural_values(target, t->next_obs), gamma);
        const double diff = q[static_cast<std::size_t>(t->action)] - y;
        loss += diff * diff * inv_n;
        std::vector<double> out_grad(q.size(), 0.0);
        out_grad[static_cast<std::size_t>(t->action)] = 2.0 * diff * inv_n;
        net.backward(trace, out_grad, grad);
    }
    return loss;
}

double neural_learn_step(Mlp& net, const Mlp& target, Adam& adam,
                         const std::vector<const Transition*>& batch, double gamma) {
    std::vector<double> grad(net.params().size(), 0.0);
    const double loss = neural_batch_gradient(net, target, batch, gamma, grad);
    if (!std::isfinite(loss)) throw NonFiniteLoss("neural training loss is not finite");
    adam.step(net.params(), grad);
    return loss;
}

// --- training loop -----------------------------------------------------------

namespace {

std::vector<int> neural_dims_for(const EnvConfig& env, int hidden) {
    const int input = env.room_size * env.room_size * kObsChannels;
    return {input, hidden, hidden, kNumActions};
}

double rolling_success(const std::deque<bool>& window) {
    if (window.empty()) return 0.0;
    int hits = 0;
    for (bool s : window) hits += s ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(window.size());
}

}  // namespace

TrainResult train(const EnvConfig& env_config, const Instruction& task,
                  const std::optional<PolicySnapshot>& init, const TrainConfig& cfg,
                  std::uint64_t seed) {
    env_config.validate();
    cfg.validate();
    if (init) {
        if (init->backend != cfg.backend) throw ConfigError("warm-start backend mismatch");
        if (init->env_config.room_size != env_config.room_size)
            throw ConfigError("warm-start env_config mismatch (room size)");
    }

    Rng rng(seed);
    const double lr = cfg.effective_learning_rate();

    TabularQ tabular(task);
    Mlp online;
    Mlp target_net;
    Adam adam;
    ReplayBuffer buffer(static_cast<std::size_t>(std::max<long>(1, cfg.replay_capacity)));

    if (cfg.backend == Backend::Tabular) {
        if (init) tabular.load_table(init->table);  // re-keyed under the new task
    } else {
        online = Mlp(neural_dims_for(env_config, cfg.hidden_size));
        if (init) {
            if (init->neural_dims != online.dims())
                throw ConfigError("warm-start network dimensions mismatch");
            online.params() = init->neural_params;
        } else {
            Rng init_rng(derive_seed(seed, "net-init"));
            online.init_uniform(init_rng);
        }
        target_net = online;
        adam = Adam(online.params().size(), lr, cfg.adam_epsilon);
    }

    TrainStats stats;
    std::deque<bool> window;
    long steps = 0;
    long episode = 0;
    double last_loss = 0.0;

    auto make_snapshot = [&]() {
        PolicySnapshot snap;
        snap.backend = cfg.backend;
        snap.instruction = task;
        snap.env_config = env_config;
        snap.train_steps_used = steps;
        snap.final_success_rate = stats.final_success_rate;
        snap.converged = stats.converged;
        snap.seed = seed;
        if (cfg.backend == Backend::Tabular) {
            snap.table = tabular.sorted_table();
        } else {
            snap.neural_dims = online.dims();
            snap.neural_params = online.params();
        }
        return snap;
    };

    if (cfg.max_train_steps == 0) {
        // Empty budget: the initialization (or a fresh zero policy) untouched.
        if (init) {
            PolicySnapshot snap = *init;
            snap.instruction = task;
            snap.train_steps_used = 0;
            return {std::move(snap), std::move(stats)};
        }
        return {make_snapshot(), std::move(stats)};
    }

    auto epsilon_at = [&](long t) {
        if (t < cfg.warmup_random_steps) return 1.0;
        const long since = t - cfg.warmup_random_steps;
        if (cfg.epsilon_decay_steps <= 0 || since >= cfg.epsilon_decay_steps) return cfg.epsilon_min;
        return 1.0 - (1.0 - cfg.epsilon_min) * static_cast<double>(since) /
                         static_cast<double>(cfg.epsilon_decay_steps);
    };

    while (steps < cfg.max_train_steps) {
        GridState state = reset(env_config, task, rng);
        double episode_return = 0.0;
        bool completed = false;
        bool succeeded = false;

        // Tabular keys / neural observations for the current state, reused
        // across the step boundary.
        std::string key;
        Observation obs;
        if (cfg.backend == Backend::Tabular) {
            key = tabular.canonical_key(state);
        } else {
            obs = encode_observation(env_config, state);
        }

        while (!state.done) {
            const double epsilon = epsilon_at(steps);
            Action action;
            if (cfg.backend == Backend::Tabular) {
                action = act_epsilon_greedy(tabular.values(key), epsilon, rng);
            } else {
                action = act_epsilon_greedy(neural_values(online, obs), epsilon, rng);
            }

            const StepResult result = step(env_config, state, action);
            ++steps;

            if (cfg.backend == Backend::Tabular) {
                std::string next_key = tabular.canonical_key(state);
                last_loss = tabular.learn_step(
                    {{key, action, result.reward, next_key, result.done}}, lr, cfg.gamma);
                key = std::move(next_key);
            } else {
                Observation next_obs = encode_observation(env_config, state);
                buffer.push({obs, action, result.reward, next_obs, result.done});
                obs = std::move(next_obs);
                if (steps >= cfg.warmup_random_steps &&
                    buffer.size() >= static_cast<std::size_t>(cfg.batch_size)) {
                    const auto batch = buffer.sample(static_cast<std::size_t>(cfg.batch_size), rng);
                    last_loss = neural_learn_step(online, target_net, adam, batch, cfg.gamma);
                }
                if (cfg.target_update_steps > 0 && steps % cfg.target_update_steps == 0)
                    target_net = online;
            }

            episode_return += result.reward;
            if (result.done) {
                completed = true;
                succeeded = success(state, task);
            }

            if (steps % cfg.log_interval == 0)
                stats.curve.push_back({steps, episode, rolling_success(window), epsilon, last_loss});
            if (steps >= cfg.max_train_steps) break;
        }

        if (completed) {
            ++episode;
            window.push_back(succeeded);
            if (window.size() > static_cast<std::size_t>(cfg.convergence_window))
                window.pop_front();
            stats.episodes.push_back({episode, steps, episode_return, succeeded});

            if (cfg.stop_on_convergence &&
                window.size() >= static_cast<std::size_t>(cfg.convergence_window) &&
                steps >= cfg.min_steps_before_convergence &&
                rolling_success(window) >= cfg.convergence_threshold) {
                stats.converged = true;
                break;
            }
        }
    }

    if (stats.curve.empty() || stats.curve.back().step != steps)
        stats.curve.push_back({steps, episode, rolling_success(window), epsilon_at(steps), last_loss});
    stats.final_success_rate = rolling_success(window);
    stats.steps_used = steps;

    if (cfg.backend == Backend::Tabular) tabular.check_value_bounds(cfg.gamma);

    return {make_snapshot(), std::move(stats)};
}

double evaluate(const PolicySnapshot& snapshot, const EnvConfig& env_config, int episodes,
                const TrainConfig& cfg, Rng& rng) {
    TabularQ tabular(snapshot.instruction);
    Mlp net;
    if (snapshot.backend == Backend::Tabular) {
        tabular.load_table(snapshot.table);
    } else {
        net = Mlp(snapshot.neural_dims);
        net.params() = snapshot.neural_params;
    }

    int successes = 0;
    for (int e = 0; e < episodes; ++e) {
        GridState state = reset(env_config, snapshot.instruction, rng);
        while (!state.done) {
            QValues q;
            if (snapshot.backend == Backend::Tabular) {
                q = tabular.values(tabular.canonical_key(state));
            } else {
                q = neural_values(net, encode_observation(env_config, state));
            }
            step(env_config, state, act_epsilon_greedy(q, cfg.eval_epsilon, rng));
        }
        if (success(state, snapshot.instruction)) ++successes;
    }
    return static_cast<double>(successes) / static_cast<double>(episodes);
}

// --- snapshot container --------------------------------------------------------
//
// Layout: magic + version line, 8-byte little-endian JSON header length, JSON
// header, raw parameter payload, 8-byte FNV-1a of the payload.

namespace {

constexpr char kSnapshotMagic[] = "TASKADAPT-SNAPSHOT v1\n";

void append_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t read_u64(const std::string& data, std::size_t off) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[off + i])) << (8 * i);
    return v;
}

void append_double(std::string& out, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, sizeof(bits));
    append_u64(out, bits);
}

double read_double(const std::string& data, std::size_t off) {
    const std::uint64_t bits = read_u64(data, off);
    double d;
    std::memcpy(&d, &bits, sizeof(d));
    return d;
}

std::uint64_t fnv1a(const std::string& data) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

std::string serialize_snapshot(const PolicySnapshot& snap) {
    nlohmann::ordered_json header;
    header["backend"] = to_string(snap.backend);
    header["instruction"] = render(snap.instruction);
    header["env_config"] = {{"room_size", snap.env_config.room_size},
                            {"n_distractors", snap.env_config.n_distractors},
                            {"max_steps", snap.env_config.max_steps},
                            {"randomize_agent_start", snap.env_config.randomize_agent_start}};
    header["train_steps_used"] = snap.train_steps_used;
    header["final_success_rate"] = snap.final_success_rate;
    header["converged"] = snap.converged;
    header["seed"] = snap.seed;

    std::string payload;
    if (snap.backend == Backend::Tabular) {
        header["n_table_entries"] = snap.table.size();
        for (const auto& [key, row] : snap.table) {
            append_u64(payload, key.size());
            payload += key;
            for (double v : row) append_double(payload, v);
        }
    } else {
        header["neural_dims"] = snap.neural_dims;
        header["n_params"] = snap.neural_params.size();
        for (double v : snap.neural_params) append_double(payload, v);
    }

    const std::string header_text = header.dump();
    std::string out(kSnapshotMagic);
    append_u64(out, header_text.size());
    out += header_text;
    out += payload;
    append_u64(out, fnv1a(payload));
    return out;
}

}  // namespace

void save_snapshot(const PolicySnapshot& snapshot, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open snapshot file for writing: " + path);
    const std::string data = serialize_snapshot(snapshot);
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw Error("failed writing snapshot file: " + path);
}

PolicySnapshot load_snapshot(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifact("cannot open snapshot file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string data = buf.str();

    const std::size_t magic_len = sizeof(kSnapshotMagic) - 1;
    if (data.size() < magic_len + 16) throw CorruptSnapshot("snapshot file truncated: " + path);
    if (data.compare(0, magic_len, kSnapshotMagic) != 0) {
        if (data.compare(0, 18, "TASKADAPT-SNAPSHOT") == 0)
            throw VersionMismatch("unsupported snapshot version in " + path);
        throw CorruptSnapshot("not a snapshot file: " + path);
    }

    std::size_t off = magic_len;
    const std::uint64_t header_len = read_u64(data, off);
    off += 8;
    if (off + header_len + 8 > data.size()) throw CorruptSnapshot("snapshot header truncated: " + path);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(data.substr(off, header_len));
    } catch (const nlohmann::json::exception&) {
        throw CorruptSnapshot("unreadable snapshot header: " + path);
    }
    off += header_len;

    const std::size_t payload_size = data.size() - off - 8;
    const std::string payload = data.substr(off, payload_size);
    if (fnv1a(payload) != read_u64(data, off + payload_size))
        throw CorruptSnapshot("snapshot payload checksum mismatch: " + path);

    PolicySnapshot snap;
    try {
        snap.backend = backend_from_string(header.at("backend").get<std::string>());
        snap.instruction = parse(header.at("instruction").get<std::string>());
        snap.env_config.room_size = header.at("env_config").at("room_size").get<int>();
        snap.env_config.n_distractors = header.at("env_config").at("n_distractors").get<int>();
        snap.env_config.max_steps = header.at("env_config").at("max_steps").get<int>();
        snap.env_config.randomize_agent_start =
            header.at("env_config").at("randomize_agent_start").get<bool>();
        snap.train_steps_used = header.at("train_steps_used").get<long>();
        snap.final_success_rate = header.at("final_success_rate").get<double>();
        snap.converged = header.at("converged").get<bool>();
        snap.seed = header.at("seed").get<std::uint64_t>();

        std::size_t pos = 0;
        if (snap.backend == Backend::Tabular) {
            const std::size_t n = header.at("n_table_entries").get<std::size_t>();
            for (std::size_t i = 0; i < n; ++i) {
                if (pos + 8 > payload.size()) throw CorruptSnapshot("snapshot payload truncated");
                const std::size_t key_len = read_u64(payload, pos);
                pos += 8;
                if (pos + key_len + 8 * kNumActions > payload.size())
                    throw CorruptSnapshot("snapshot payload truncated");
                const std::string key = payload.substr(pos, key_len);
                pos += key_len;
                QValues row{};
                for (int a = 0; a < kNumActions; ++a, pos += 8) row[static_cast<std::size_t>(a)] = read_double(payload, pos);
                snap.table.emplace(key, row);
            }
        } else {
            snap.neural_dims = header.at("neural_dims").get<std::vector<int>>();
            const std::size_t n = header.at("n_params").get<std::size_t>();
            if (n * 8 != payload.size()) throw CorruptSnapshot("snapshot payload size mismatch");
            snap.neural_params.reserve(n);
            for (std::size_t i = 0; i < n; ++i, pos += 8)
                snap.neural_params.push_back(read_double(payload, pos));
        }
    } catch (const nlohmann::json::exception&) {
        throw CorruptSnapshot("snapshot header missing fields: " + path);
    }
    return snap;
}

std::uint64_t snapshot_hash(const PolicySnapshot& snapshot) {
    return fnv1a(serialize_snapshot(snapshot));
}

}  // namespace taskadapt
