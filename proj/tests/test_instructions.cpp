#include <doctest.h>

#include <set>

#include "taskadapt/errors.hpp"
#include "taskadapt/instructions.hpp"
#include "taskadapt/rng.hpp"

using namespace taskadapt;

TEST_CASE("enumerate_all yields 24 distinct instructions in index order") {
    const auto all = enumerate_all();
    REQUIRE(all.size() == 24);
    CHECK(all.front() == Instruction{Verb::Goto, Color::Blue, ObjectKind::Box});
    std::set<int> indices;
    for (std::size_t i = 0; i < all.size(); ++i) {
        CHECK(all[i].index() == static_cast<int>(i));
        CHECK(Instruction::from_index(static_cast<int>(i)) == all[i]);
        indices.insert(all[i].index());
    }
    CHECK(indices.size() == 24);
}

TEST_CASE("parse/render round-trip over the full instruction space") {
    for (const Instruction& instr : enumerate_all()) {
        CHECK(parse(render(instr)) == instr);
    }
}

TEST_CASE("parse accepts variants and case") {
    CHECK(parse("Go To The Blue Ball") == Instruction{Verb::Goto, Color::Blue, ObjectKind::Ball});
    CHECK(parse("pick up the yellow box") == Instruction{Verb::Pickup, Color::Yellow, ObjectKind::Box});
    CHECK(parse("goto red key") == Instruction{Verb::Goto, Color::Red, ObjectKind::Key});
}

TEST_CASE("parse rejects malformed text with positions") {
    CHECK_THROWS_AS(parse(""), MalformedInstruction);
    CHECK_THROWS_AS(parse("jump the blue ball"), MalformedInstruction);
    CHECK_THROWS_AS(parse("goto the purple ball"), MalformedInstruction);
    CHECK_THROWS_AS(parse("goto the blue chair"), MalformedInstruction);
    CHECK_THROWS_AS(parse("goto the blue ball now"), MalformedInstruction);
    try {
        parse("goto the purple ball");
        FAIL("expected MalformedInstruction");
    } catch (const MalformedInstruction& e) {
        CHECK(e.position == 2);  // 0-based word index of "purple"
    }
}

TEST_CASE("tokenize matches the fixed token table") {
    CHECK(tokenize({Verb::Goto, Color::Blue, ObjectKind::Ball}) == std::array<int, 3>{0, 2, 8});
    CHECK(tokenize({Verb::Pickup, Color::Yellow, ObjectKind::Box}) == std::array<int, 3>{1, 5, 6});

    // Injective over the whole space, ids in range, padding id never used.
    std::set<std::array<int, 3>> seen;
    for (const Instruction& instr : enumerate_all()) {
        const auto toks = tokenize(instr);
        for (int t : toks) {
            CHECK(t >= 0);
            CHECK(t < kPaddingToken);
        }
        seen.insert(toks);
    }
    CHECK(seen.size() == 24);
}

TEST_CASE("token table covers all nine content words") {
    const auto entries = TokenTable::entries();
    REQUIRE(entries.size() == 9);
    CHECK(entries[0] == std::pair<std::string, int>{"goto", 0});
    CHECK(entries[2] == std::pair<std::string, int>{"blue", 2});
    CHECK(entries[8] == std::pair<std::string, int>{"ball", 8});
}

TEST_CASE("sample_distinct draws without replacement and is seed-deterministic") {
    Rng a(7), b(7);
    const auto s1 = sample_distinct(a, 6, {});
    const auto s2 = sample_distinct(b, 6, {});
    CHECK(s1 == s2);
    CHECK(std::set<Instruction>(s1.begin(), s1.end()).size() == 6);

    Rng c(8);
    const std::vector<Instruction> exclude = {s1[0], s1[1]};
    const auto s3 = sample_distinct(c, 22, exclude);
    CHECK(s3.size() == 22);
    for (const Instruction& i : s3) {
        CHECK(i != exclude[0]);
        CHECK(i != exclude[1]);
    }
}

TEST_CASE("sample_distinct rejects oversized draws") {
    Rng rng(1);
    CHECK_THROWS_AS(sample_distinct(rng, 25, {}), InsufficientPopulation);
    const std::vector<Instruction> one = {parse("goto the blue box")};
    CHECK_THROWS_AS(sample_distinct(rng, 24, one), InsufficientPopulation);
}
