#include "taskadapt/instructions.hpp"

#include <algorithm>
#include <cctype>
#include <optional>
#include <sstream>

#include "taskadapt/errors.hpp"

namespace taskadapt {

const char* to_word(Verb v) { return v == Verb::Goto ? "goto" : "pickup"; }

const char* to_word(Color c) {
    switch (c) {
        case Color::Blue: return "blue";
        case Color::Red: return "red";
        case Color::Green: return "green";
        default: return "yellow";
    }
}

const char* to_word(ObjectKind o) {
    switch (o) {
        case ObjectKind::Box: return "box";
        case ObjectKind::Key: return "key";
        default: return "ball";
    }
}

Instruction Instruction::from_index(int i) {
    return Instruction{static_cast<Verb>(i / (kNumColors * kNumObjectKinds)),
                       static_cast<Color>((i / kNumObjectKinds) % kNumColors),
                       static_cast<ObjectKind>(i % kNumObjectKinds)};
}

std::vector<std::pair<std::string, int>> TokenTable::entries() {
    std::vector<std::pair<std::string, int>> out;
    for (int v = 0; v < kNumVerbs; ++v) out.emplace_back(to_word(static_cast<Verb>(v)), v);
    for (int c = 0; c < kNumColors; ++c)
        out.emplace_back(to_word(static_cast<Color>(c)), kNumVerbs + c);
    for (int o = 0; o < kNumObjectKinds; ++o)
        out.emplace_back(to_word(static_cast<ObjectKind>(o)), kNumVerbs + kNumColors + o);
    return out;
}

namespace {

std::vector<std::string> lowercase_words(const std::string& text) {
    std::string lowered(text);
    std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    std::istringstream in(lowered);
    std::vector<std::string> words;
    std::string w;
    while (in >> w) words.push_back(w);
    return words;
}

std::optional<Color> color_from_word(const std::string& w) {
    for (int c = 0; c < kNumColors; ++c)
        if (w == to_word(static_cast<Color>(c))) return static_cast<Color>(c);
    return std::nullopt;
}

std::optional<ObjectKind> object_from_word(const std::string& w) {
    for (int o = 0; o < kNumObjectKinds; ++o)
        if (w == to_word(static_cast<ObjectKind>(o))) return static_cast<ObjectKind>(o);
    return std::nullopt;
}

}  // namespace

Instruction parse(const std::string& text) {
    const std::vector<std::string> words = lowercase_words(text);
    std::size_t pos = 0;
    auto need = [&](const char* what) -> const std::string& {
        if (pos >= words.size()) throw MalformedInstruction(pos, std::string("expected ") + what);
        return words[pos];
    };

    // Verb: "goto", "pickup", or the two-word forms "go to" / "pick up".
    Verb verb;
    {
        const std::string& w = need("verb");
        if (w == "goto" || w == "pickup") {
            verb = w == "goto" ? Verb::Goto : Verb::Pickup;
            ++pos;
        } else if ((w == "go" || w == "pick") && pos + 1 < words.size()) {
            const std::string& w2 = words[pos + 1];
            if (w == "go" && w2 == "to") {
                verb = Verb::Goto;
            } else if (w == "pick" && w2 == "up") {
                verb = Verb::Pickup;
            } else {
                throw MalformedInstruction(pos + 1, "unknown verb '" + w + " " + w2 + "'");
            }
            pos += 2;
        } else {
            throw MalformedInstruction(pos, "unknown verb '" + w + "'");
        }
    }

    if (pos < words.size() && words[pos] == "the") ++pos;  // article optional

    const std::string& cw = need("color");
    const auto color = color_from_word(cw);
    if (!color) throw MalformedInstruction(pos, "unknown color '" + cw + "'");
    ++pos;

    const std::string& ow = need("object");
    const auto object = object_from_word(ow);
    if (!object) throw MalformedInstruction(pos, "unknown object '" + ow + "'");
    ++pos;

    if (pos != words.size())
        throw MalformedInstruction(pos, "trailing word '" + words[pos] + "'");
    return Instruction{verb, *color, *object};
}

std::string render(const Instruction& instr) {
    std::string out(to_word(instr.verb));
    out += " the ";
    out += to_word(instr.color);
    out += ' ';
    out += to_word(instr.object);
    return out;
}

std::array<int, 3> tokenize(const Instruction& instr) {
    return {static_cast<int>(instr.verb), kNumVerbs + static_cast<int>(instr.color),
            kNumVerbs + kNumColors + static_cast<int>(instr.object)};
}

std::vector<Instruction> enumerate_all() {
    std::vector<Instruction> out;
    out.reserve(kNumInstructions);
    for (int i = 0; i < kNumInstructions; ++i) out.push_back(Instruction::from_index(i));
    return out;
}

std::vector<Instruction> sample_distinct(Rng& rng, int m, const std::vector<Instruction>& exclude) {
    std::vector<Instruction> pool;
    for (const Instruction& instr : enumerate_all()) {
        if (std::find(exclude.begin(), exclude.end(), instr) == exclude.end())
            pool.push_back(instr);
    }
    if (m < 0 || static_cast<std::size_t>(m) > pool.size())
        throw InsufficientPopulation("requested " + std::to_string(m) + " instructions from a pool of " +
                                     std::to_string(pool.size()));
    // Partial Fisher-Yates over the ordered pool.
    std::vector<Instruction> out;
    out.reserve(m);
    for (int i = 0; i < m; ++i) {
        const std::size_t j = i + rng.bounded(pool.size() - i);
        std::swap(pool[i], pool[j]);
        out.push_back(pool[i]);
    }
    return out;
}

}  // namespace taskadapt
