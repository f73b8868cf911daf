#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "taskadapt/rng.hpp"

namespace taskadapt {

enum class Verb : std::uint8_t { Goto = 0, Pickup = 1 };
enum class Color : std::uint8_t { Blue = 0, Red = 1, Green = 2, Yellow = 3 };
enum class ObjectKind : std::uint8_t { Box = 0, Key = 1, Ball = 2 };

inline constexpr int kNumVerbs = 2;
inline constexpr int kNumColors = 4;
inline constexpr int kNumObjectKinds = 3;
inline constexpr int kNumInstructions = kNumVerbs * kNumColors * kNumObjectKinds;  // 24

const char* to_word(Verb v);
const char* to_word(Color c);
const char* to_word(ObjectKind o);

// A (verb, color, object) task label, e.g. "pickup the yellow box".
struct Instruction {
    Verb verb;
    Color color;
    ObjectKind object;

    friend bool operator==(const Instruction&, const Instruction&) = default;

    // Lexicographic in (verb, color, object); matches enumerate_all order.
    friend auto operator<=>(const Instruction& a, const Instruction& b) {
        return a.index() <=> b.index();
    }

    int index() const {
        return (static_cast<int>(verb) * kNumColors + static_cast<int>(color)) * kNumObjectKinds +
               static_cast<int>(object);
    }
    static Instruction from_index(int i);
};

// Word -> embedding id. Ids 0-1 verbs, 2-5 colors, 6-8 objects, in declared
// enum order; id 9 is reserved padding and never produced for a valid
// instruction.
inline constexpr int kTokenTableSize = 10;
inline constexpr int kPaddingToken = 9;

struct TokenTable {
    // (word, id) pairs for all 9 content words, in id order.
    static std::vector<std::pair<std::string, int>> entries();
};

Instruction parse(const std::string& text);
std::string render(const Instruction& instr);
std::array<int, 3> tokenize(const Instruction& instr);
std::vector<Instruction> enumerate_all();

// m distinct instructions drawn uniformly without replacement from Z \ exclude.
std::vector<Instruction> sample_distinct(Rng& rng, int m, const std::vector<Instruction>& exclude);

}  // namespace taskadapt
