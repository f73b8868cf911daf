#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "taskadapt/errors.hpp"
#include "taskadapt/learner.hpp"

using namespace taskadapt;

namespace {

const Instruction kGotoRedBall{Verb::Goto, Color::Red, ObjectKind::Ball};
const Instruction kPickupBlueKey{Verb::Pickup, Color::Blue, ObjectKind::Key};

std::filesystem::path temp_file(const char* name) {
    return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("argmax breaks ties toward the lowest action index") {
    QValues q{};
    CHECK(argmax_action(q) == Action::Forward);
    q[3] = 2.0;
    CHECK(argmax_action(q) == Action::Pickup);
    q[1] = 2.0;  // tie between 1 and 3
    CHECK(argmax_action(q) == Action::TurnLeft);
}

TEST_CASE("epsilon-greedy is uniform at epsilon 1 and greedy at epsilon 0") {
    QValues q{};
    q[5] = 1.0;
    Rng rng(3);
    int counts[kNumActions] = {};
    const int n = 70000;
    for (int i = 0; i < n; ++i) ++counts[static_cast<int>(act_epsilon_greedy(q, 1.0, rng))];
    const double expect = n / static_cast<double>(kNumActions);
    const double tol = 3.0 * std::sqrt(expect);  // ~3 sigma
    for (int a = 0; a < kNumActions; ++a) CHECK(std::abs(counts[a] - expect) < tol);

    for (int i = 0; i < 100; ++i) CHECK(act_epsilon_greedy(q, 0.0, rng) == Action::Open);
}

TEST_CASE("td_target") {
    QValues next{};
    next[2] = 3.0;
    CHECK(td_target(0.5, true, next, 0.99) == 0.5);
    CHECK(td_target(0.5, false, next, 0.99) == doctest::Approx(0.5 + 0.99 * 3.0));
}

TEST_CASE("tabular update converges geometrically to a fixed target") {
    // Repeated terminal transitions from one state: Q <- Q + lr (r - Q), so
    // after n updates Q = r (1 - (1-lr)^n).
    TabularQ q(kGotoRedBall);
    const double lr = 0.1, r = 0.8;
    for (int n = 1; n <= 20; ++n) {
        q.learn_step({{"s", Action::Forward, r, "t", true}}, lr, 0.99);
        const double expected = r * (1.0 - std::pow(1.0 - lr, n));
        CHECK(q.values("s")[0] == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("tabular canonical key relabels colors and kinds relative to the task") {
    // Two states that differ only by the task-relevant color must collapse to
    // the same key under their respective tasks.
    GridState red;
    red.agent_x = 1;
    red.agent_y = 1;
    red.agent_dir = 0;
    red.objects.push_back({3, 1, Color::Red, ObjectKind::Ball});
    GridState blue = red;
    blue.objects[0].color = Color::Blue;

    TabularQ on_red({Verb::Goto, Color::Red, ObjectKind::Ball});
    TabularQ on_blue({Verb::Goto, Color::Blue, ObjectKind::Ball});
    CHECK(on_red.canonical_key(red) == on_blue.canonical_key(blue));
    CHECK(on_red.canonical_key(red) != on_red.canonical_key(blue));

    // Distinct non-task colors stay distinct.
    GridState green = red;
    green.objects[0].color = Color::Green;
    GridState yellow = red;
    yellow.objects[0].color = Color::Yellow;
    CHECK(on_red.canonical_key(green) != on_red.canonical_key(yellow));
}

TEST_CASE("tabular value bound check") {
    TabularQ q(kGotoRedBall);
    q.learn_step({{"s", Action::Forward, 0.9, "t", true}}, 1.0, 0.99);
    CHECK_NOTHROW(q.check_value_bounds(0.99));
    q.learn_step({{"s", Action::Forward, 300.0, "t", true}}, 1.0, 0.99);
    CHECK_THROWS_AS(q.check_value_bounds(0.99), Error);
}

TEST_CASE("replay buffer is a ring and sampling is seeded") {
    ReplayBuffer buf(3);
    for (int i = 0; i < 5; ++i)
        buf.push({{static_cast<double>(i)}, Action::Forward, 0.0, {}, false});
    CHECK(buf.size() == 3);
    Rng a(1), b(1);
    const auto s1 = buf.sample(8, a);
    const auto s2 = buf.sample(8, b);
    for (std::size_t i = 0; i < s1.size(); ++i) CHECK(s1[i] == s2[i]);
    for (const Transition* t : s1) CHECK(t->obs[0] >= 2.0);  // oldest entries evicted
}

TEST_CASE("neural batch gradient matches central finite differences") {
    Mlp net({6, 8, kNumActions});
    Mlp target({6, 8, kNumActions});
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        Rng rng(seed);
        net.init_uniform(rng);
        target.init_uniform(rng);

        std::vector<Transition> data;
        for (int i = 0; i < 4; ++i) {
            Observation o(6), n(6);
            for (auto& v : o) v = rng.symmetric(1.0);
            for (auto& v : n) v = rng.symmetric(1.0);
            data.push_back({o, static_cast<Action>(rng.bounded(kNumActions)), rng.uniform01(), n,
                            i % 2 == 0});
        }
        std::vector<const Transition*> batch;
        for (const Transition& t : data) batch.push_back(&t);

        std::vector<double> grad(net.params().size(), 0.0);
        neural_batch_gradient(net, target, batch, 0.99, grad);

        const double h = 1e-4;
        double max_rel = 0.0;
        for (std::size_t i = 0; i < net.params().size(); i += 7) {
            const double orig = net.params()[i];
            net.params()[i] = orig + h;
            std::vector<double> dummy(net.params().size(), 0.0);
            const double up = neural_batch_gradient(net, target, batch, 0.99, dummy);
            net.params()[i] = orig - h;
            std::fill(dummy.begin(), dummy.end(), 0.0);
            const double down = neural_batch_gradient(net, target, batch, 0.99, dummy);
            net.params()[i] = orig;
            const double fd = (up - down) / (2.0 * h);
            const double denom = std::max({std::abs(fd), std::abs(grad[i]), 1e-8});
            max_rel = std::max(max_rel, std::abs(fd - grad[i]) / denom);
        }
        CHECK(max_rel < 1e-4);
    }
}

TEST_CASE("training a tabular policy solves an easy task deterministically") {
    EnvConfig env;
    env.room_size = 4;
    env.n_distractors = 0;
    TrainConfig cfg;
    cfg.max_train_steps = 100000;
    cfg.epsilon_decay_steps = 60000;

    const TrainResult r1 = train(env, kGotoRedBall, std::nullopt, cfg, 42);
    CHECK(r1.stats.converged);
    CHECK(r1.stats.final_success_rate >= 0.95);
    CHECK(r1.snapshot.table.size() > 0);
    CHECK_FALSE(r1.stats.curve.empty());
    CHECK(r1.stats.curve.back().step == r1.stats.steps_used);

    const TrainResult r2 = train(env, kGotoRedBall, std::nullopt, cfg, 42);
    CHECK(snapshot_hash(r1.snapshot) == snapshot_hash(r2.snapshot));

    // A greedy rollout of the trained policy beats a frozen random policy.
    Rng eval_rng(9);
    CHECK(evaluate(r1.snapshot, env, 100, cfg, eval_rng) >= 0.9);
    PolicySnapshot blank = r1.snapshot;
    blank.table.clear();
    Rng blank_rng(9);
    CHECK(evaluate(blank, env, 100, cfg, blank_rng) < 0.5);
}

TEST_CASE("zero training budget returns the initialization untouched") {
    EnvConfig env;
    env.room_size = 4;
    env.n_distractors = 0;
    TrainConfig cfg;
    cfg.max_train_steps = 0;

    const TrainResult fresh = train(env, kGotoRedBall, std::nullopt, cfg, 1);
    CHECK(fresh.snapshot.table.empty());
    CHECK(fresh.stats.curve.empty());
    CHECK(fresh.stats.steps_used == 0);

    TrainConfig full = cfg;
    full.max_train_steps = 100000;
    full.epsilon_decay_steps = 60000;
    const TrainResult trained = train(env, kGotoRedBall, std::nullopt, full, 1);
    const TrainResult kept = train(env, kPickupBlueKey, trained.snapshot, cfg, 2);
    CHECK(kept.snapshot.table == trained.snapshot.table);
    CHECK(kept.snapshot.instruction == kPickupBlueKey);
}

TEST_CASE("warm starting does not mutate the source snapshot") {
    EnvConfig env;
    env.room_size = 4;
    env.n_distractors = 0;
    TrainConfig cfg;
    cfg.max_train_steps = 60000;
    cfg.epsilon_decay_steps = 40000;

    const TrainResult base = train(env, kGotoRedBall, std::nullopt, cfg, 7);
    const std::uint64_t before = snapshot_hash(base.snapshot);
    TrainConfig adapt = cfg;
    adapt.max_train_steps = 5000;
    adapt.stop_on_convergence = false;
    train(env, kPickupBlueKey, base.snapshot, adapt, 8);
    CHECK(snapshot_hash(base.snapshot) == before);
}

TEST_CASE("verb-matching warm start transfers immediately") {
    EnvConfig env;
    env.room_size = 4;
    env.n_distractors = 0;
    TrainConfig cfg;
    cfg.max_train_steps = 100000;
    cfg.epsilon_decay_steps = 60000;

    const TrainResult base = train(env, kGotoRedBall, std::nullopt, cfg, 7);
    REQUIRE(base.stats.converged);

    // Same verb, different color/object: the relabeled table applies as-is,
    // so a zero-step warm start already acts optimally.
    PolicySnapshot warm = base.snapshot;
    TrainConfig none = cfg;
    none.max_train_steps = 0;
    const Instruction goto_blue_box{Verb::Goto, Color::Blue, ObjectKind::Box};
    const TrainResult moved = train(env, goto_blue_box, warm, none, 9);
    Rng eval_rng(10);
    CHECK(evaluate(moved.snapshot, env, 100, cfg, eval_rng) >= 0.9);
}

TEST_CASE("snapshot save/load round-trips both backends") {
    EnvConfig env;
    env.room_size = 3;
    env.n_distractors = 0;
    TrainConfig cfg;
    cfg.max_train_steps = 2000;
    cfg.stop_on_convergence = false;
    const TrainResult tab = train(env, kGotoRedBall, std::nullopt, cfg, 3);

    const auto tab_path = temp_file("snap_tab.snap");
    save_snapshot(tab.snapshot, tab_path.string());
    const PolicySnapshot tab_loaded = load_snapshot(tab_path.string());
    CHECK(snapshot_hash(tab_loaded) == snapshot_hash(tab.snapshot));
    CHECK(tab_loaded.table == tab.snapshot.table);
    CHECK(tab_loaded.instruction == kGotoRedBall);

    TrainConfig ncfg = cfg;
    ncfg.backend = Backend::Neural;
    ncfg.max_train_steps = 50;
    ncfg.hidden_size = 8;
    const TrainResult net = train(env, kGotoRedBall, std::nullopt, ncfg, 3);
    const auto net_path = temp_file("snap_net.snap");
    save_snapshot(net.snapshot, net_path.string());
    const PolicySnapshot net_loaded = load_snapshot(net_path.string());
    CHECK(snapshot_hash(net_loaded) == snapshot_hash(net.snapshot));
    CHECK(net_loaded.neural_params == net.snapshot.neural_params);
}

TEST_CASE("snapshot loader rejects corruption and wrong versions") {
    EnvConfig env;
    env.room_size = 3;
    env.n_distractors = 0;
    TrainConfig cfg;
    cfg.max_train_steps = 500;
    cfg.stop_on_convergence = false;
    const TrainResult r = train(env, kGotoRedBall, std::nullopt, cfg, 3);
    const auto path = temp_file("snap_corrupt.snap");
    save_snapshot(r.snapshot, path.string());

    // Truncation.
    std::string data;
    {
        std::ifstream in(path, std::ios::binary);
        data.assign(std::istreambuf_iterator<char>(in), {});
    }
    {
        std::ofstream out(path, std::ios::binary);
        out.write(data.data(), static_cast<std::streamsize>(data.size() / 2));
    }
    CHECK_THROWS_AS(load_snapshot(path.string()), CorruptSnapshot);

    // Payload flip breaks the checksum.
    {
        std::string bad = data;
        bad[bad.size() - 12] = static_cast<char>(bad[bad.size() - 12] ^ 0x01);
        std::ofstream out(path, std::ios::binary);
        out.write(bad.data(), static_cast<std::streamsize>(bad.size()));
    }
    CHECK_THROWS_AS(load_snapshot(path.string()), CorruptSnapshot);

    // Future version.
    {
        std::string bad = data;
        bad[bad.find("v1") + 1] = '9';
        std::ofstream out(path, std::ios::binary);
        out.write(bad.data(), static_cast<std::streamsize>(bad.size()));
    }
    CHECK_THROWS_AS(load_snapshot(path.string()), VersionMismatch);
}

TEST_CASE("neural training runs and logs finite losses on a tiny budget") {
    EnvConfig env;
    env.room_size = 3;
    env.n_distractors = 0;
    TrainConfig cfg;
    cfg.backend = Backend::Neural;
    cfg.max_train_steps = 400;
    cfg.stop_on_convergence = false;
    cfg.hidden_size = 16;
    cfg.batch_size = 8;
    cfg.log_interval = 100;
    const TrainResult r = train(env, kGotoRedBall, std::nullopt, cfg, 5);
    CHECK(r.stats.steps_used == 400);
    CHECK(r.snapshot.neural_params.size() > 0);
    for (const CurvePoint& p : r.stats.curve) CHECK(std::isfinite(p.loss));

    const TrainResult r2 = train(env, kGotoRedBall, std::nullopt, cfg, 5);
    CHECK(snapshot_hash(r.snapshot) == snapshot_hash(r2.snapshot));
}
