#include "taskadapt/gridworld.hpp"

#include <algorithm>
#include <deque>
#include <unordered_set>

#include "taskadapt/errors.hpp"

namespace taskadapt {

void EnvConfig::validate() const {
    if (room_size < 3) throw ConfigError("room_size must be >= 3");
    if (n_distractors < 0) throw ConfigError("n_distractors must be >= 0");
    if (n_distractors + 1 > room_size * room_size - 1)
        throw ConfigError("too many objects for the room: " + std::to_string(n_distractors) +
                          " distractors in a " + std::to_string(room_size) + "x" +
                          std::to_string(room_size) + " room");
    if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
}

const Object* GridState::object_at(int x, int y) const {
    for (const Object& o : objects)
        if (o.x == x && o.y == y) return &o;
    return nullptr;
}

bool success(const GridState& state, const Instruction& task) {
    if (task.verb == Verb::Pickup) {
        return state.carrying && state.carrying->first == task.color &&
               state.carrying->second == task.object;
    }
    // Goto: the cell directly ahead holds a matching object.
    const int fx = state.agent_x + kDirDx[state.agent_dir];
    const int fy = state.agent_y + kDirDy[state.agent_dir];
    const Object* o = state.object_at(fx, fy);
    return o && o->color == task.color && o->kind == task.object;
}

GridState reset(const EnvConfig& config, const Instruction& task, Rng& rng) {
    config.validate();
    const int size = config.room_size;
    GridState state;
    state.task = task;

    auto free_cells = [&]() {
        std::vector<int> cells;
        for (int i = 0; i < size * size; ++i)
            if (!state.object_at(i % size, i / size)) cells.push_back(i);
        return cells;
    };

    // Target first, then distractors (type from the 12 (color, kind) combos,
    // duplicates allowed), each on its own free cell.
    {
        const int cell = static_cast<int>(rng.bounded(static_cast<std::uint64_t>(size * size)));
        state.objects.push_back({cell % size, cell / size, task.color, task.object});
    }
    for (int i = 0; i < config.n_distractors; ++i) {
        const int type = static_cast<int>(rng.bounded(kNumColors * kNumObjectKinds));
        const std::vector<int> cells = free_cells();
        const int cell = cells[rng.bounded(cells.size())];
        state.objects.push_back({cell % size, cell / size, static_cast<Color>(type / kNumObjectKinds),
                                 static_cast<ObjectKind>(type % kNumObjectKinds)});
    }

    // Agent on a free cell with uniform direction; resample until the start
    // state is not already successful so every episode needs >= 1 action.
    const std::vector<int> cells = free_cells();
    for (int attempt = 0; attempt < 100; ++attempt) {
        const int cell = cells[rng.bounded(cells.size())];
        state.agent_x = cell % size;
        state.agent_y = cell / size;
        state.agent_dir = config.randomize_agent_start ? static_cast<int>(rng.bounded(4)) : 0;
        if (!success(state, task)) return state;
    }
    throw PlacementImpossible("could not place the agent in a non-terminal start state");
}

StepResult step(const EnvConfig& config, GridState& state, Action action) {
    if (state.done) throw SteppingFinishedEpisode("step() called on a finished episode");
    const int size = config.room_size;
    const int max_steps = config.effective_max_steps();

    const int fx = state.agent_x + kDirDx[state.agent_dir];
    const int fy = state.agent_y + kDirDy[state.agent_dir];
    const bool ahead_inside = fx >= 0 && fx < size && fy >= 0 && fy < size;

    switch (action) {
        case Action::Forward:
            if (ahead_inside && !state.object_at(fx, fy)) {
                state.agent_x = fx;
                state.agent_y = fy;
            }
            break;
        case Action::TurnLeft:
            state.agent_dir = (state.agent_dir + 3) % 4;
            break;
        case Action::TurnRight:
            state.agent_dir = (state.agent_dir + 1) % 4;
            break;
        case Action::Pickup:
            if (ahead_inside && !state.carrying) {
                for (std::size_t i = 0; i < state.objects.size(); ++i) {
                    if (state.objects[i].x == fx && state.objects[i].y == fy) {
                        state.carrying = {state.objects[i].color, state.objects[i].kind};
                        state.objects.erase(state.objects.begin() + static_cast<std::ptrdiff_t>(i));
                        break;
                    }
                }
            }
            break;
        case Action::Drop:
            if (ahead_inside && state.carrying && !state.object_at(fx, fy)) {
                state.objects.push_back({fx, fy, state.carrying->first, state.carrying->second});
                state.carrying.reset();
            }
            break;
        case Action::Open:
            break;  // no doors in a single room
        case Action::Done:
            break;
    }

    ++state.steps_taken;

    StepResult result;
    if (success(state, state.task)) {
        state.done = true;
        result.done = true;
        result.reward = 1.0 - 0.9 * (static_cast<double>(state.steps_taken) /
                                     static_cast<double>(max_steps));
    } else if (state.steps_taken >= max_steps || action == Action::Done) {
        state.done = true;
        result.done = true;
        result.reward = 0.0;
    }
    return result;
}

Observation encode_observation(const EnvConfig& config, const GridState& state) {
    const int size = config.room_size;
    Observation obs(static_cast<std::size_t>(size) * size * kObsChannels, 0.0);
    auto at = [&](int x, int y, int ch) -> double& {
        return obs[(static_cast<std::size_t>(y) * size + x) * kObsChannels + ch];
    };
    for (const Object& o : state.objects) {
        at(o.x, o.y, static_cast<int>(o.kind)) = 1.0;
        at(o.x, o.y, 3 + static_cast<int>(o.color)) = 1.0;
    }
    at(state.agent_x, state.agent_y, 7) = 1.0;
    at(state.agent_x, state.agent_y, 8 + state.agent_dir) = 1.0;
    if (state.carrying) {
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                at(x, y, 12 + static_cast<int>(state.carrying->second)) = 1.0;
                at(x, y, 15 + static_cast<int>(state.carrying->first)) = 1.0;
            }
        }
    }
    return obs;
}

std::string state_key(const GridState& state) {
    std::string key;
    key.reserve(4 + state.objects.size() * 4);
    key.push_back(static_cast<char>(state.agent_x));
    key.push_back(static_cast<char>(state.agent_y));
    key.push_back(static_cast<char>(state.agent_dir));
    key.push_back(state.carrying
                      ? static_cast<char>(1 + static_cast<int>(state.carrying->first) *
                                                  kNumObjectKinds +
                                          static_cast<int>(state.carrying->second))
                      : '\0');
    std::vector<Object> sorted = state.objects;
    std::sort(sorted.begin(), sorted.end(), [](const Object& a, const Object& b) {
        return std::tie(a.x, a.y, a.color, a.kind) < std::tie(b.x, b.y, b.color, b.kind);
    });
    for (const Object& o : sorted) {
        key.push_back(static_cast<char>(o.x));
        key.push_back(static_cast<char>(o.y));
        key.push_back(static_cast<char>(o.color));
        key.push_back(static_cast<char>(o.kind));
    }
    return key;
}

std::optional<std::vector<Action>> shortest_plan(const EnvConfig& config, const GridState& start) {
    if (success(start, start.task)) return std::vector<Action>{};
    const int max_depth = config.effective_max_steps() - start.steps_taken;
    if (max_depth <= 0) return std::nullopt;

    // Done never helps and Open is a no-op, so expand the other five actions.
    static constexpr Action kExpand[] = {Action::Forward, Action::TurnLeft, Action::TurnRight,
                                         Action::Pickup, Action::Drop};

    struct Node {
        GridState state;
        int parent;
        Action action;
        int depth;
    };
    std::vector<Node> nodes;
    nodes.push_back({start, -1, Action::Done, 0});
    std::unordered_set<std::string> visited;
    visited.insert(state_key(start));

    for (std::size_t head = 0; head < nodes.size(); ++head) {
        // nodes grows during the loop; index, don't hold references.
        if (nodes[head].depth >= max_depth) continue;
        for (Action a : kExpand) {
            GridState next = nodes[head].state;
            next.steps_taken = 0;  // depth tracked separately; key excludes steps
            next.done = false;
            const int depth = nodes[head].depth + 1;
            step(config, next, a);
            if (success(next, next.task)) {
                std::vector<Action> plan{a};
                for (int i = static_cast<int>(head); nodes[i].parent >= 0; i = nodes[i].parent)
                    plan.push_back(nodes[i].action);
                std::reverse(plan.begin(), plan.end());
                return plan;
            }
            if (visited.insert(state_key(next)).second)
                nodes.push_back({std::move(next), static_cast<int>(head), a, depth});
        }
    }
    return std::nullopt;
}

std::optional<int> shortest_solution_length(const EnvConfig& config, const GridState& state) {
    const auto plan = shortest_plan(config, state);
    if (!plan) return std::nullopt;
    return static_cast<int>(plan->size());
}

std::string render_text(const EnvConfig& config, const GridState& state) {
    const int size = config.room_size;
    static constexpr char kAgentGlyph[] = {'>', 'v', '<', '^'};
    std::string out;
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            if (x == state.agent_x && y == state.agent_y) {
                out.push_back(kAgentGlyph[state.agent_dir]);
            } else if (const Object* o = state.object_at(x, y)) {
                // b/k/o for box/key/ball; uppercase when it matches the task.
                char c = o->kind == ObjectKind::Box ? 'b' : (o->kind == ObjectKind::Key ? 'k' : 'o');
                if (o->color == state.task.color && o->kind == state.task.object)
                    c = static_cast<char>(c - 'a' + 'A');
                out.push_back(c);
            } else {
                out.push_back('.');
            }
        }
        out.push_back('\n');
    }
    return out;
}

}  // namespace taskadapt
