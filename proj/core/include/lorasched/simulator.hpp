// SPDX-License-Identifier: Apache-2.0
//
// Deterministic discrete-event simulation of a GPU cluster running multi-LoRA
// tuning tasks: profiling, task placement, per-executor admission, early exit,
// backfill, completion and replanning.
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lorasched/config.hpp"
#include "lorasched/inter_sched.hpp"
#include "lorasched/intra_sched.hpp"

namespace lorasched::sim {

struct PolicyFlags {
    bool batched = true;
    bool scheduler = true;
    bool early_exit = true;

    /// "b", "b_s", "b_ee", "b_s_ee", ... ("seq" when batching is off).
    std::string label() const;
    /// Comma-separated subset of {b, s, ee}; empty string means all off.
    static PolicyFlags parse(std::string_view text);
    friend bool operator==(const PolicyFlags&, const PolicyFlags&) = default;
};

/// Step time of one executor tick under `cost` for the given residency.
double step_time(const CostModel& cost, const intra::ExecutorState& exec, bool batched, double cost_scale);

struct JobOutcome {
    int task_id = 0;
    int job_id = 0;
    HyperParams params;
    CurveKind planted_kind = CurveKind::Converging;
    JobStatus status = JobStatus::Pending;
    std::optional<LossPoint> best_val;
    std::optional<std::int64_t> checkpoint_step;
    std::int64_t steps_trained = 0;
    std::optional<std::int64_t> exit_step;
    std::optional<double> exit_time;
    std::int64_t samples_scheduled = 0;
    std::int64_t samples_trained = 0;
    std::int64_t samples_saved = 0;
};

struct GanttRow {
    int task_id = 0;
    std::vector<int> gpu_ids;
    double start = 0.0;
    double end = 0.0;
    friend bool operator==(const GanttRow&, const GanttRow&) = default;
};

struct TaskOutcome {
    int task_id = 0;
    int gpus = 1;
    std::vector<int> gpu_ids;
    double arrival = 0.0;
    double start = 0.0;
    double end = 0.0;
    double duration_estimate = 0.0;
    double throughput = 0.0;
    double profiling_overhead = 0.0;
    std::int64_t b_max = 0;
    intra::MemoryFit memory_fit;
    std::size_t profiling_samples = 0;
    double peak_memory_fraction = 0.0;  // of safety_margin * capacity
    int ground_truth_best = -1;
    std::optional<int> best_job;
    bool ground_truth_best_completed = false;
    double best_val_with_ee = 0.0;
    double best_val_without_ee = 0.0;
    double loss_ratio = 1.0;
    std::int64_t samples_total = 0;
    std::int64_t samples_trained = 0;
};

enum class SavedReason { Diverging, Overfitting, Underperforming };
inline constexpr std::array<SavedReason, 3> kSavedReasons = {SavedReason::Diverging, SavedReason::Overfitting,
                                                             SavedReason::Underperforming};
std::string_view to_string(SavedReason r);

struct SimReport {
    PolicyFlags flags;
    std::uint64_t seed = 0;
    double makespan = 0.0;
    std::int64_t samples_total = 0;
    std::int64_t samples_trained = 0;
    std::array<std::int64_t, 3> samples_saved_by{};  // indexed like kSavedReasons
    double loss_ratio = 1.0;                         // mean over tasks
    std::vector<TaskOutcome> tasks;
    std::vector<JobOutcome> jobs;
    std::vector<GanttRow> gantt;
    std::uint64_t events_processed = 0;
    std::uint64_t replans = 0;
    bool all_plans_optimal = true;

    std::int64_t samples_saved() const;
    double saved_fraction() const;
};

/// Throws InputError for invalid inputs (including tasks needing more GPUs than
/// the cluster has, or jobs whose batch alone exceeds memory) and
/// InvariantViolation if any runtime invariant breaks.
SimReport run(const WorkloadSpec& workload, const ClusterConfig& cluster, PolicyFlags flags, std::uint64_t seed);

struct AblationReport {
    SimReport b;
    SimReport b_s;
    SimReport b_ee;
    SimReport b_s_ee;

    double ratio_b_over_b_s() const { return b.makespan / b_s.makespan; }
    double ratio_b_over_b_ee() const { return b.makespan / b_ee.makespan; }
    double ratio_b_over_b_s_ee() const { return b.makespan / b_s_ee.makespan; }
    double ratio_b_ee_over_b_s_ee() const { return b_ee.makespan / b_s_ee.makespan; }
    /// makespan(B+S+EE) <= makespan(B+EE) <= makespan(B).
    bool ee_chain_monotone() const;
    /// makespan(B+S) <= makespan(B).
    bool scheduler_helps() const;
    /// Enabling EE never lengthens: B+EE <= B and B+S+EE <= B+S.
    bool ee_never_hurts() const;
};

AblationReport ablate(const WorkloadSpec& workload, const ClusterConfig& cluster, std::uint64_t seed);

/// One row per task occupancy interval, sorted by (start, task_id).
std::vector<GanttRow> emit_gantt(const SimReport& report);
std::vector<GanttRow> emit_gantt(const inter::SchedulePlan& plan);
/// Rebuilds plan assignments (not makespan flags) from rows produced by emit_gantt(plan).
inter::SchedulePlan plan_from_gantt(const std::vector<GanttRow>& rows);

}  // namespace lorasched::sim
