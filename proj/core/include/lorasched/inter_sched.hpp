// SPDX-License-Identifier: Apache-2.0
//
// Cluster-level placement of rigid multi-GPU tasks (P|size_j|C_max): an exact
// branch and bound, a shortest-job-first list scheduler, an exhaustive oracle
// for small instances, and replanning with running tasks pinned in place.
//
// Time is integer microseconds throughout; seconds are rounded up on entry.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace lorasched::inter {

using Micros = std::int64_t;

inline constexpr Micros kMicrosPerSecond = 1'000'000;

/// Seconds to microseconds, rounded up. Throws InputError on negative or non-finite input.
Micros to_micros(double seconds);
inline double to_seconds(Micros t) { return static_cast<double>(t) / static_cast<double>(kMicrosPerSecond); }

/// total_samples / throughput, in seconds.
double estimate_duration(double total_samples, double throughput);

struct SchedTask {
    int task_id = 0;
    Micros duration = 0;
    int gpus = 1;
};

/// A task already running: it keeps `gpu_ids` until `remaining` from now.
struct PinnedTask {
    int task_id = 0;
    std::vector<int> gpu_ids;
    Micros remaining = 0;
};

struct SchedInstance {
    int G = 1;
    std::vector<SchedTask> tasks;
    std::vector<PinnedTask> pinned;

    /// Throws InputError on g > G, duplicate ids, bad durations or overlapping pins.
    void validate() const;
};

struct Assignment {
    int task_id = 0;
    Micros start = 0;
    Micros end = 0;
    std::vector<int> gpu_ids;  // ascending
    bool pinned = false;
    friend bool operator==(const Assignment&, const Assignment&) = default;
};

struct SchedulePlan {
    std::vector<Assignment> assignments;  // ascending task_id
    Micros makespan = 0;
    bool optimal = true;
    std::uint64_t nodes = 0;

    const Assignment* find(int task_id) const;
    friend bool operator==(const SchedulePlan& a, const SchedulePlan& b) {
        return a.assignments == b.assignments && a.makespan == b.makespan && a.optimal == b.optimal;
    }
};

struct SolveOptions {
    double time_limit_seconds = 1.0;
};

/// Minimum makespan; among optimal plans the lexicographically smallest start
/// vector (by task_id), then the lowest GPU ids. `optimal` is false only when
/// the time limit cut the search short.
SchedulePlan solve_exact(const SchedInstance& inst, const SolveOptions& opts = {});

/// Ascending (duration, task_id); each task starts at the earliest time no
/// earlier than its predecessor's start at which it has enough free GPUs.
SchedulePlan solve_sjf(const SchedInstance& inst);

inline constexpr std::size_t kOracleMaxTasks = 6;

struct OracleResult {
    Micros makespan = 0;
    std::vector<Micros> starts;  // same order as inst.tasks
};

/// Exhaustive search over start times drawn from {0} and subset sums of the
/// durations. Independent of solve_exact. Refuses more than `max_tasks` tasks.
OracleResult brute_force_oracle(const SchedInstance& inst, std::size_t max_tasks = kOracleMaxTasks);

/// Plan for the given start times (in inst.tasks order), GPU ids by first fit
/// in (start, task_id) order. Throws InvariantViolation if the starts are infeasible.
SchedulePlan plan_from_starts(const SchedInstance& inst, const std::vector<Micros>& starts);

/// max(longest task, ceil(total area / G), pinned remainders).
Micros makespan_lower_bound(const SchedInstance& inst);

/// Checks GPU counts, per-GPU interval disjointness, instantaneous capacity,
/// pinned placements and the makespan. Throws InvariantViolation on failure.
void check_plan(const SchedInstance& inst, const SchedulePlan& plan);

struct RunningTask {
    int task_id = 0;
    std::vector<int> gpu_ids;
    Micros start = 0;      // absolute
    Micros remaining = 0;  // from `now`
};

struct ClusterState {
    Micros now = 0;
    int G = 1;
    std::vector<RunningTask> running;
    std::vector<SchedTask> queued;
};

enum class ReplanTrigger { TaskArrival, TaskCompletion };

std::string to_string(ReplanTrigger t);

/// Pins running tasks, solves exactly for the queue, and returns absolute
/// times. Running tasks keep their original start and GPU set.
SchedulePlan replan(const ClusterState& state, ReplanTrigger trigger, const SolveOptions& opts = {});

}  // namespace lorasched::inter
