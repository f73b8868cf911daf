#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "taskadapt/instructions.hpp"
#include "taskadapt/rng.hpp"

namespace taskadapt {

// Single-room, fully observable gridworld. Coordinates are interior cells
// (0..room_size-1 on each axis); walls sit outside this range by convention.
struct EnvConfig {
    int room_size = 6;
    int n_distractors = 3;
    int max_steps = 0;  // 0 means the default 8 * room_size
    bool randomize_agent_start = true;

    int effective_max_steps() const { return max_steps > 0 ? max_steps : 8 * room_size; }
    void validate() const;  // throws ConfigError
};

enum class Action : std::uint8_t {
    Forward = 0,
    TurnLeft = 1,
    TurnRight = 2,
    Pickup = 3,
    Drop = 4,
    Open = 5,  // no doors in a single room; kept for action-space parity
    Done = 6,
};

inline constexpr int kNumActions = 7;

// Facing directions: 0=east(+x), 1=south(+y), 2=west, 3=north.
inline constexpr int kNumDirections = 4;
inline constexpr int kDirDx[kNumDirections] = {1, 0, -1, 0};
inline constexpr int kDirDy[kNumDirections] = {0, 1, 0, -1};

struct Object {
    int x;
    int y;
    Color color;
    ObjectKind kind;
    friend bool operator==(const Object&, const Object&) = default;
};

struct GridState {
    int agent_x = 0;
    int agent_y = 0;
    int agent_dir = 0;
    std::vector<Object> objects;
    std::optional<std::pair<Color, ObjectKind>> carrying;
    int steps_taken = 0;
    Instruction task{Verb::Goto, Color::Blue, ObjectKind::Box};
    bool done = false;

    const Object* object_at(int x, int y) const;
};

struct StepResult {
    double reward = 0.0;
    bool done = false;
};

// One-hot per-cell channels: object kind (3), object color (4), agent
// presence (1), agent direction (4, set at the agent cell), carried kind (3,
// broadcast), carried color (4, broadcast). 19 channels per cell.
inline constexpr int kObsChannels = 19;
using Observation = std::vector<double>;

GridState reset(const EnvConfig& config, const Instruction& task, Rng& rng);

// Mutates `state` in place and returns the reward/done outcome.
StepResult step(const EnvConfig& config, GridState& state, Action action);

bool success(const GridState& state, const Instruction& task);

Observation encode_observation(const EnvConfig& config, const GridState& state);

// Breadth-first search over the exact step dynamics. Returns the shortest
// action sequence reaching success within max_steps, or nullopt.
std::optional<std::vector<Action>> shortest_plan(const EnvConfig& config, const GridState& state);

// Length of the shortest plan, or nullopt when unreachable within max_steps.
std::optional<int> shortest_solution_length(const EnvConfig& config, const GridState& state);

// Compact byte key identifying the dynamics-relevant part of a state
// (agent pose, carried object, sorted object list; steps and task excluded).
std::string state_key(const GridState& state);

// One character per cell, for debugging and the CLI's --render flag.
std::string render_text(const EnvConfig& config, const GridState& state);

}  // namespace taskadapt
