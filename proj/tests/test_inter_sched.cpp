// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "lorasched/errors.hpp"
#include "lorasched/inter_sched.hpp"
#include "lorasched/rng.hpp"

using namespace lorasched;
using namespace lorasched::inter;

namespace {

constexpr Micros S = kMicrosPerSecond;

SchedInstance random_instance(Rng& rng, std::size_t n) {
    SchedInstance inst;
    inst.G = rng.uniform() < 0.5 ? 4 : 8;
    const int gs[] = {1, 2, 4};
    for (std::size_t i = 0; i < n; ++i) {
        inst.tasks.push_back({static_cast<int>(i), rng.uniform_int(1, 20) * S, gs[rng.uniform_int(0, 2)]});
    }
    return inst;
}

bool capacity_ok(const SchedInstance& inst, const std::vector<Micros>& starts) {
    for (std::size_t i = 0; i < starts.size(); ++i) {
        int used = 0;
        for (std::size_t j = 0; j < starts.size(); ++j) {
            if (starts[j] <= starts[i] && starts[i] < starts[j] + inst.tasks[j].duration) used += inst.tasks[j].gpus;
        }
        if (used > inst.G) return false;
    }
    return true;
}

// Exhaustive search over start vectors on the subset-sum grid. Returns the
// lexicographically smallest optimal start vector when tasks are listed by id.
std::vector<Micros> lex_min_optimal(const SchedInstance& inst) {
    std::set<Micros> sums = {0};
    for (const auto& t : inst.tasks) {
        std::set<Micros> next = sums;
        for (Micros s : sums) next.insert(s + t.duration);
        sums = std::move(next);
    }
    const std::vector<Micros> grid(sums.begin(), sums.end());
    const std::size_t n = inst.tasks.size();
    std::vector<std::size_t> idx(n, 0);
    std::vector<Micros> best;
    Micros best_c = -1;
    while (true) {
        std::vector<Micros> starts(n);
        Micros c = 0;
        for (std::size_t i = 0; i < n; ++i) {
            starts[i] = grid[idx[i]];
            c = std::max(c, starts[i] + inst.tasks[i].duration);
        }
        if ((best_c < 0 || c < best_c || (c == best_c && starts < best)) && capacity_ok(inst, starts)) {
            best_c = c;
            best = starts;
        }
        std::size_t k = n;
        while (k > 0 && ++idx[k - 1] == grid.size()) idx[--k] = 0;
        if (k == 0) break;
    }
    return best;
}

std::vector<Micros> starts_of(const SchedulePlan& p) {
    std::vector<Micros> s;
    for (const auto& a : p.assignments) s.push_back(a.start);
    return s;
}

}  // namespace

TEST(Duration, Estimate) {
    EXPECT_DOUBLE_EQ(estimate_duration(1000, 10), 100.0);
    EXPECT_DOUBLE_EQ(estimate_duration(0, 10), 0.0);
    EXPECT_THROW(estimate_duration(10, 0), InputError);
    EXPECT_THROW(estimate_duration(10, -1), InputError);
}

TEST(Micros, RoundsUpButSnapsNoise) {
    EXPECT_EQ(to_micros(1.0), S);
    EXPECT_EQ(to_micros(1.0000004), S + 1);
    EXPECT_EQ(to_micros(0.1 + 0.2), 300000);
    EXPECT_THROW(to_micros(-1.0), InputError);
}

TEST(Exact, SingleTask) {
    SchedInstance inst{4, {{7, 5 * S, 2}}, {}};
    const auto p = solve_exact(inst);
    EXPECT_EQ(p.makespan, 5 * S);
    EXPECT_EQ(p.assignments[0].start, 0);
    EXPECT_EQ(p.assignments[0].gpu_ids, (std::vector<int>{0, 1}));
    EXPECT_TRUE(p.optimal);
}

TEST(Exact, FullWidthTasksSerialize) {
    SchedInstance inst{4, {{0, 3 * S, 4}, {1, 5 * S, 4}}, {}};
    EXPECT_EQ(solve_exact(inst).makespan, 8 * S);
    EXPECT_EQ(solve_sjf(inst).makespan, 8 * S);
}

TEST(Exact, FullParallelism) {
    SchedInstance inst{4, {{0, 6 * S, 1}, {1, 6 * S, 1}, {2, 6 * S, 1}, {3, 6 * S, 1}}, {}};
    const auto p = solve_exact(inst);
    EXPECT_EQ(p.makespan, 6 * S);
    for (const auto& a : p.assignments) EXPECT_EQ(a.start, 0);
}

TEST(Exact, SeparatingInstance) {
    // Certified by brute_force_oracle: optimum 7 s, shortest-first 8 s.
    SchedInstance inst{4, {{0, 3 * S, 4}, {1, 4 * S, 1}, {2, 1 * S, 1}}, {}};
    EXPECT_EQ(brute_force_oracle(inst).makespan, 7 * S);
    const auto exact = solve_exact(inst);
    const auto sjf = solve_sjf(inst);
    EXPECT_EQ(exact.makespan, 7 * S);
    EXPECT_EQ(sjf.makespan, 8 * S);
    EXPECT_EQ(starts_of(exact), (std::vector<Micros>{0, 3 * S, 3 * S}));
    EXPECT_EQ(starts_of(sjf), (std::vector<Micros>{1 * S, 4 * S, 0}));
}

TEST(Exact, InvalidInstances) {
    EXPECT_THROW(solve_exact({4, {{0, S, 5}}, {}}), InputError);
    EXPECT_THROW(solve_exact({4, {{0, S, 1}, {0, S, 1}}, {}}), InputError);
    EXPECT_THROW(solve_exact({4, {}, {{0, {0, 1}, S}, {1, {1, 2}, S}}}), InputError);
}

TEST(Exact, EmptyInstance) {
    const auto p = solve_sjf({4, {}, {}});
    EXPECT_TRUE(p.assignments.empty());
    EXPECT_EQ(p.makespan, 0);
}

TEST(Exact, MatchesOracleAndLexMinGrid) {
    Rng rng(1234);
    for (int trial = 0; trial < 200; ++trial) {
        const auto inst = random_instance(rng, static_cast<std::size_t>(rng.uniform_int(1, 4)));
        const auto exact = solve_exact(inst);
        check_plan(inst, exact);
        ASSERT_EQ(exact.makespan, brute_force_oracle(inst).makespan) << "trial " << trial;
        ASSERT_EQ(starts_of(exact), lex_min_optimal(inst)) << "trial " << trial;
    }
}

TEST(Exact, DominatesSjfAndRespectsBounds) {
    Rng rng(99);
    for (int trial = 0; trial < 300; ++trial) {
        const auto inst = random_instance(rng, static_cast<std::size_t>(rng.uniform_int(1, 7)));
        const auto exact = solve_exact(inst);
        const auto sjf = solve_sjf(inst);
        check_plan(inst, exact);
        check_plan(inst, sjf);
        EXPECT_LE(exact.makespan, sjf.makespan);
        Micros longest = 0, area = 0;
        for (const auto& t : inst.tasks) {
            longest = std::max(longest, t.duration);
            area += t.duration * t.gpus;
        }
        EXPECT_GE(exact.makespan, longest);
        EXPECT_GE(exact.makespan, (area + inst.G - 1) / inst.G);
        EXPECT_GE(exact.makespan, makespan_lower_bound(inst));
    }
}

TEST(Exact, Deterministic) {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const auto inst = random_instance(rng, 6);
        EXPECT_EQ(solve_exact(inst), solve_exact(inst));
    }
}

TEST(Exact, PinnedMatchesOracle) {
    Rng rng(31);
    for (int trial = 0; trial < 300; ++trial) {
        auto inst = random_instance(rng, static_cast<std::size_t>(rng.uniform_int(1, 4)));
        std::vector<int> free_ids(static_cast<std::size_t>(inst.G));
        for (int g = 0; g < inst.G; ++g) free_ids[static_cast<std::size_t>(g)] = g;
        const auto n_pins = rng.uniform_int(0, 2);
        for (int p = 0; p < n_pins; ++p) {
            const auto want = static_cast<std::size_t>(rng.uniform_int(1, 3));
            if (free_ids.size() < want) break;
            std::vector<int> ids(free_ids.end() - static_cast<std::ptrdiff_t>(want), free_ids.end());
            free_ids.resize(free_ids.size() - want);
            std::sort(ids.begin(), ids.end());
            inst.pinned.push_back({100 + p, ids, rng.uniform_int(1, 15) * S});
        }
        const auto exact = solve_exact(inst);
        check_plan(inst, exact);
        ASSERT_EQ(exact.makespan, brute_force_oracle(inst).makespan) << "trial " << trial;
        for (const auto& pin : inst.pinned) {
            const auto* a = exact.find(pin.task_id);
            ASSERT_NE(a, nullptr);
            EXPECT_TRUE(a->pinned);
            EXPECT_EQ(a->start, 0);
            EXPECT_EQ(a->gpu_ids, pin.gpu_ids);
        }
    }
}

TEST(Exact, ElevenTaskShapeIsProvenFast) {
    Rng rng(7);
    const int gs[] = {4, 4, 4, 2, 2, 2, 1, 1, 1, 1, 1};
    for (int trial = 0; trial < 5; ++trial) {
        SchedInstance inst{8, {}, {}};
        for (int i = 0; i < 11; ++i) inst.tasks.push_back({i, to_micros(rng.uniform(1800, 21600)), gs[i]});
        const auto p = solve_exact(inst);
        EXPECT_TRUE(p.optimal);
        check_plan(inst, p);
    }
}

TEST(Oracle, RefusesLargeInstances) {
    Rng rng(1);
    EXPECT_THROW(brute_force_oracle(random_instance(rng, 7)), InputError);
    EXPECT_EQ(brute_force_oracle({4, {{0, 9 * S, 3}}, {}}).makespan, 9 * S);
    EXPECT_EQ(brute_force_oracle({4, {{0, 2 * S, 1}, {1, 5 * S, 1}}, {}}).makespan, 5 * S);
}

TEST(CheckPlan, CatchesOverlapAndCapacity) {
    SchedInstance inst{2, {{0, 2 * S, 1}, {1, 2 * S, 1}}, {}};
    SchedulePlan p;
    p.assignments = {{0, 0, 2 * S, {0}, false}, {1, S, 3 * S, {0}, false}};
    p.makespan = 3 * S;
    EXPECT_THROW(check_plan(inst, p), InvariantViolation);
    p.assignments[1].gpu_ids = {1};
    EXPECT_NO_THROW(check_plan(inst, p));
    p.makespan = 4 * S;
    EXPECT_THROW(check_plan(inst, p), InvariantViolation);
}

TEST(Replan, CompletionBackfillsImmediately) {
    ClusterState st{100 * S, 4, {}, {{3, 10 * S, 4}}};
    const auto p = replan(st, ReplanTrigger::TaskCompletion);
    EXPECT_EQ(p.find(3)->start, 100 * S);
    EXPECT_EQ(p.makespan, 110 * S);
}

TEST(Replan, ArrivalWhileFullWaitsForRelease) {
    ClusterState st{50 * S, 4, {{1, {0, 1, 2, 3}, 20 * S, 5 * S}}, {{2, 3 * S, 2}}};
    const auto p = replan(st, ReplanTrigger::TaskArrival);
    EXPECT_EQ(p.find(2)->start, 55 * S);
    SchedInstance pinned{4, {{2, 3 * S, 2}}, {{1, {0, 1, 2, 3}, 5 * S}}};
    EXPECT_EQ(p.makespan - st.now, brute_force_oracle(pinned).makespan);
}

TEST(Replan, EmptyQueueKeepsOnlyPinned) {
    ClusterState st{10 * S, 8, {{4, {2, 3}, 3 * S, 9 * S}, {5, {0}, 7 * S, S}}, {}};
    const auto p = replan(st, ReplanTrigger::TaskCompletion);
    ASSERT_EQ(p.assignments.size(), 2u);
    EXPECT_EQ(p.find(4)->start, 3 * S);
    EXPECT_EQ(p.find(4)->gpu_ids, (std::vector<int>{2, 3}));
    EXPECT_EQ(p.find(4)->end, 19 * S);
    EXPECT_EQ(p.find(5)->start, 7 * S);
    EXPECT_EQ(p.makespan, 19 * S);
}

TEST(Replan, RunningTasksNeverMove) {
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        ClusterState st{rng.uniform_int(0, 100) * S, 8, {}, {}};
        st.running.push_back({0, {0, 1, 2}, 0, rng.uniform_int(1, 30) * S});
        st.running.push_back({1, {5}, 0, rng.uniform_int(1, 30) * S});
        for (int i = 0; i < 4; ++i) st.queued.push_back({10 + i, rng.uniform_int(1, 20) * S, 1 << rng.uniform_int(0, 2)});
        const auto p = replan(st, ReplanTrigger::TaskArrival);
        for (const auto& r : st.running) {
            EXPECT_EQ(p.find(r.task_id)->start, r.start);
            EXPECT_EQ(p.find(r.task_id)->gpu_ids, r.gpu_ids);
        }
        for (const auto& q : st.queued) EXPECT_GE(p.find(q.task_id)->start, st.now);
    }
}
