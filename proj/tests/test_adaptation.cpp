#include <doctest.h>

#include <algorithm>

#include "taskadapt/adaptation.hpp"
#include "taskadapt/errors.hpp"

using namespace taskadapt;

namespace {

ExperimentPlan desk_plan() {
    ExperimentPlan plan;
    plan.alpha = {parse("goto the red ball"), parse("pickup the blue key")};
    plan.beta = {parse("goto the green key"), parse("pickup the yellow box")};
    plan.n_adapt_steps = 4000;
    plan.master_seed = 21;
    plan.env_config.room_size = 4;
    plan.env_config.n_distractors = 0;
    plan.train_config.max_train_steps = 100000;
    plan.train_config.epsilon_decay_steps = 60000;
    return plan;
}

AdaptationSample make_sample(const char* base, const char* transfer, double perf,
                             std::vector<double> curve = {}) {
    AdaptationSample s;
    s.base_instruction = parse(base);
    s.transfer_instruction = parse(transfer);
    s.success_rate = perf;
    long step = 0;
    for (double v : curve) s.curve.push_back({step += 100, 0, v, 0.0, 0.0});
    return s;
}

}  // namespace

TEST_CASE("plan validation") {
    ExperimentPlan plan = desk_plan();
    CHECK_NOTHROW(plan.validate());

    plan.alpha = {parse("goto the red ball")};
    CHECK_THROWS_AS(plan.validate(), ConfigError);  // k >= 2

    plan = desk_plan();
    plan.alpha.push_back(plan.alpha.front());
    CHECK_THROWS_AS(plan.validate(), ConfigError);  // distinct alpha

    plan = desk_plan();
    plan.beta = {plan.beta.front(), plan.beta.front()};
    CHECK_THROWS_AS(plan.validate(), ConfigError);  // distinct beta

    plan = desk_plan();
    plan.beta.clear();
    CHECK_THROWS_AS(plan.validate(), ConfigError);

    plan = desk_plan();
    plan.alpha = enumerate_all();
    CHECK_THROWS_AS(plan.validate(), ConfigError);  // k < 24

    plan = desk_plan();
    plan.n_adapt_steps = 0;
    CHECK_THROWS_AS(plan.validate(), ConfigError);
}

TEST_CASE("base policies train deterministically and in parallel") {
    const ExperimentPlan plan = desk_plan();
    const auto serial = train_base_policies(plan, 1);
    const auto parallel = train_base_policies(plan, 4);
    REQUIRE(serial.size() == 2);
    REQUIRE(parallel.size() == 2);
    for (std::size_t i = 0; i < serial.size(); ++i) {
        CHECK(serial[i].converged);
        CHECK(serial[i].final_success_rate >= 0.90);
        REQUIRE(serial[i].snapshot.has_value());
        REQUIRE(parallel[i].snapshot.has_value());
        CHECK(snapshot_hash(*serial[i].snapshot) == snapshot_hash(*parallel[i].snapshot));
    }
}

TEST_CASE("self-transfer retains competence under the exploration restart") {
    const ExperimentPlan plan = desk_plan();
    const auto bases = train_base_policies(plan, 1);
    const Instruction self = bases[0].instruction;
    const AdaptationSample s =
        sample_adaptation(*bases[0].snapshot, self, plan.n_adapt_steps, plan.env_config,
                          plan.train_config, adaptation_seed(plan.master_seed, self, self));
    CHECK(s.success_rate >= bases[0].final_success_rate - 0.15);
    CHECK(s.n_steps == plan.n_adapt_steps);
    CHECK_FALSE(s.curve.empty());
    for (const CurvePoint& p : s.curve) CHECK(p.step <= plan.n_adapt_steps);
}

TEST_CASE("n = 1 adaptation yields a single curve point") {
    const ExperimentPlan plan = desk_plan();
    const auto bases = train_base_policies(plan, 1);
    const AdaptationSample s = sample_adaptation(*bases[0].snapshot, plan.beta[0], 1,
                                                 plan.env_config, plan.train_config, 5);
    CHECK(s.curve.size() == 1);
    CHECK(s.curve[0].step == 1);
}

TEST_CASE("run_grid produces k x p canonically sorted samples regardless of parallelism") {
    const ExperimentPlan plan = desk_plan();
    const auto bases = train_base_policies(plan, 1);
    const auto serial = run_grid(plan, bases, plan.beta, 1);
    const auto parallel = run_grid(plan, bases, plan.beta, 4);
    REQUIRE(serial.size() == 4);
    REQUIRE(parallel.size() == 4);
    for (std::size_t i = 0; i + 1 < serial.size(); ++i) {
        const auto a = std::pair(serial[i].base_instruction, serial[i].transfer_instruction);
        const auto b = std::pair(serial[i + 1].base_instruction, serial[i + 1].transfer_instruction);
        CHECK(a < b);
    }
    for (std::size_t i = 0; i < serial.size(); ++i) {
        CHECK(serial[i].base_instruction == parallel[i].base_instruction);
        CHECK(serial[i].transfer_instruction == parallel[i].transfer_instruction);
        CHECK(serial[i].success_rate == parallel[i].success_rate);
        CHECK(serial[i].seed == parallel[i].seed);
    }
}

TEST_CASE("scratch baselines start cold and are seed-deterministic") {
    const ExperimentPlan plan = desk_plan();
    const auto a = run_scratch_baselines(plan.beta, plan.n_adapt_steps, plan.env_config,
                                         plan.train_config, plan.master_seed, 1);
    const auto b = run_scratch_baselines(plan.beta, plan.n_adapt_steps, plan.env_config,
                                         plan.train_config, plan.master_seed, 2);
    REQUIRE(a.size() == 2);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].curve.front().rolling_success <= 0.2);
        REQUIRE(a[i].curve.size() == b[i].curve.size());
        for (std::size_t j = 0; j < a[i].curve.size(); ++j)
            CHECK(a[i].curve[j].rolling_success == b[i].curve[j].rolling_success);
    }
}

TEST_CASE("build_dataset reproduces the worked two-base example") {
    // Performance 0.91 vs 0.86 on "goto the green key" gives the record
    // (goto the green key, pickup the red ball, goto the yellow box, 1) plus
    // its mirror.
    const std::vector<AdaptationSample> samples = {
        make_sample("pickup the red ball", "goto the green key", 0.91),
        make_sample("goto the yellow box", "goto the green key", 0.86),
    };
    const auto records = build_dataset(samples);
    REQUIRE(records.size() == 2);
    const ComparisonRecord expected{parse("goto the green key"), parse("pickup the red ball"),
                                    parse("goto the yellow box"), 1};
    const ComparisonRecord mirror{parse("goto the green key"), parse("goto the yellow box"),
                                  parse("pickup the red ball"), 0};
    CHECK(std::count(records.begin(), records.end(), expected) == 1);
    CHECK(std::count(records.begin(), records.end(), mirror) == 1);
}

TEST_CASE("build_dataset skips ties and symmetrizes everything else") {
    const std::vector<AdaptationSample> samples = {
        make_sample("goto the red ball", "goto the green key", 0.5),
        make_sample("goto the yellow box", "goto the green key", 0.5),   // tied pair
        make_sample("pickup the blue key", "goto the green key", 0.9),   // beats both
        make_sample("goto the red ball", "pickup the yellow box", 0.3),
        make_sample("pickup the blue key", "pickup the yellow box", 0.2),
    };
    const auto records = build_dataset(samples);
    // z_x = green key: pairs (red ball, blue key) and (yellow box, blue key)
    // untied -> 4 records; z_x = yellow box: one untied pair -> 2 records.
    REQUIRE(records.size() == 6);
    for (const ComparisonRecord& r : records) {
        CHECK(r.z_i != r.z_j);
        const ComparisonRecord mirror{r.z_x, r.z_j, r.z_i, 1 - r.label};
        CHECK(std::count(records.begin(), records.end(), mirror) == 1);
    }
    // Canonical sort.
    for (std::size_t i = 0; i + 1 < records.size(); ++i) {
        const auto a = std::tuple(records[i].z_x, records[i].z_i, records[i].z_j);
        const auto b = std::tuple(records[i + 1].z_x, records[i + 1].z_i, records[i + 1].z_j);
        CHECK(a < b);
    }
}

TEST_CASE("build_dataset labels agree with a brute-force pass") {
    // Synthetic grid of 3 bases x 2 transfers with distinct performances.
    const std::vector<AdaptationSample> samples = {
        make_sample("goto the red ball", "goto the green key", 0.1),
        make_sample("goto the yellow box", "goto the green key", 0.8),
        make_sample("pickup the blue key", "goto the green key", 0.4),
        make_sample("goto the red ball", "pickup the yellow box", 0.9),
        make_sample("goto the yellow box", "pickup the yellow box", 0.2),
        make_sample("pickup the blue key", "pickup the yellow box", 0.2),
    };
    const auto records = build_dataset(samples);
    auto perf = [&](const Instruction& base, const Instruction& z_x) {
        for (const AdaptationSample& s : samples)
            if (s.base_instruction == base && s.transfer_instruction == z_x) return s.success_rate;
        FAIL("missing sample");
        return 0.0;
    };
    std::size_t untied_pairs = 0;
    for (const AdaptationSample& s : samples)
        for (const AdaptationSample& t : samples)
            if (s.transfer_instruction == t.transfer_instruction &&
                s.base_instruction < t.base_instruction && s.success_rate != t.success_rate)
                ++untied_pairs;
    CHECK(records.size() == 2 * untied_pairs);
    for (const ComparisonRecord& r : records)
        CHECK(r.label == (perf(r.z_i, r.z_x) > perf(r.z_j, r.z_x) ? 1 : 0));
}

TEST_CASE("dimension_matches") {
    const Instruction a = parse("goto the red ball");
    CHECK(dimension_matches(MatchDimension::Verb, a, parse("goto the blue key")));
    CHECK_FALSE(dimension_matches(MatchDimension::Verb, a, parse("pickup the red ball")));
    CHECK(dimension_matches(MatchDimension::Color, a, parse("pickup the red key")));
    CHECK_FALSE(dimension_matches(MatchDimension::Color, a, parse("goto the blue ball")));
    CHECK(dimension_matches(MatchDimension::Object, a, parse("pickup the blue ball")));
    CHECK_FALSE(dimension_matches(MatchDimension::Object, a, parse("goto the red key")));
}

TEST_CASE("group_curves averages pointwise within partitions") {
    const std::vector<AdaptationSample> samples = {
        make_sample("goto the red ball", "goto the green key", 0.4, {0.2, 0.4}),
        make_sample("goto the yellow box", "goto the green key", 0.6, {0.4, 0.6}),
        make_sample("pickup the blue key", "goto the green key", 0.1, {0.0, 0.1}),
    };
    const MatchCurves curves = group_curves(samples, MatchDimension::Verb);
    REQUIRE(curves.steps == std::vector<long>{100, 200});
    CHECK(curves.match_count == 2);
    CHECK(curves.differ_count == 1);
    CHECK_FALSE(curves.empty_partition);
    CHECK(curves.match_mean[0] == doctest::Approx(0.3));
    CHECK(curves.match_mean[1] == doctest::Approx(0.5));
    CHECK(curves.differ_mean[0] == doctest::Approx(0.0));
    CHECK(curves.overall_mean[0] == doctest::Approx(0.2));
    CHECK(curves.overall_mean[1] == doctest::Approx((0.4 + 0.6 + 0.1) / 3.0));
}

TEST_CASE("group_curves flags empty partitions and includes scratch means") {
    const std::vector<AdaptationSample> samples = {
        make_sample("goto the red ball", "goto the red ball", 1.0, {0.9, 1.0}),
        make_sample("goto the green key", "goto the green key", 1.0, {0.8, 0.9}),
    };
    const std::vector<AdaptationSample> scratch = {
        make_sample("goto the red ball", "goto the red ball", 0.2, {0.0, 0.2}),
    };
    const MatchCurves curves = group_curves(samples, MatchDimension::Verb, scratch);
    CHECK(curves.empty_partition);  // no verb-differ samples
    CHECK(curves.differ_mean.empty());
    REQUIRE(curves.scratch_mean.size() == 2);
    CHECK(curves.scratch_mean[1] == doctest::Approx(0.2));
    CHECK_THROWS_AS(group_curves({}, MatchDimension::Verb), Error);
}
