// SPDX-License-Identifier: Apache-2.0
//
// Domain types shared by every module: hyperparameter configurations, jobs,
// tasks, loss trajectories, and the synthetic loss-curve generator.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace lorasched {

struct HyperParams {
    double learning_rate = 1e-4;
    int lora_rank = 16;
    int per_adapter_batch_size = 1;

    /// LoRA alpha follows the alpha = 2r convention.
    double alpha() const { return 2.0 * lora_rank; }
    double scale() const { return alpha() / lora_rank; }

    void validate() const;
    friend bool operator==(const HyperParams&, const HyperParams&) = default;
};

struct LossPoint {
    std::int64_t step = 0;
    double loss = 0.0;
    friend bool operator==(const LossPoint&, const LossPoint&) = default;
};

struct LossTrajectory {
    std::vector<LossPoint> train;
    std::vector<LossPoint> train_ema;
    std::vector<LossPoint> val;

    bool empty() const { return train.empty() && val.empty(); }
    /// Validation loss recorded exactly at `step`, if any.
    std::optional<double> val_at(std::int64_t step) const;
    /// Lowest validation loss; ties resolve to the earliest step.
    std::optional<LossPoint> best_val() const;

    friend bool operator==(const LossTrajectory&, const LossTrajectory&) = default;
};

enum class JobStatus {
    Pending,
    Warmup,
    Training,
    ExitedDiverging,
    ExitedOverfitting,
    ExitedUnderperforming,
    Completed,
};

std::string_view to_string(JobStatus s);
bool is_terminal(JobStatus s);
/// Legal lifecycle edges: Pending->Warmup->{Training, ExitedUnderperforming,
/// ExitedDiverging}; Training->{ExitedDiverging, ExitedOverfitting, Completed}.
bool is_valid_transition(JobStatus from, JobStatus to);

enum class CurveKind { Converging, Diverging, Overfitting, Underperforming };

std::string_view to_string(CurveKind k);
CurveKind curve_kind_from_string(std::string_view s);

/// Parametric loss curve. All kinds share the converging backbone
///   conv(s) = floor + (base_level - floor) * exp(-decay_rate * s)
/// with validation loss conv(s) * (1 + val_gap). Diverging curves turn both
/// losses upward at break_step; overfitting curves turn only validation upward.
struct CurveProfile {
    CurveKind kind = CurveKind::Converging;
    double base_level = 2.0;
    double decay_rate = 0.01;
    std::int64_t break_step = 0;
    double post_break_slope = 0.0;
    double noise_sigma = 0.0;
    double floor = 1.0;
    double val_gap = 0.03;

    /// Noise-free training loss at `step`.
    double train_at(std::int64_t step) const;
    /// Noise-free validation loss at `step`.
    double val_at(std::int64_t step) const;

    void validate(std::int64_t total_steps) const;
};

struct Job {
    int job_id = 0;
    HyperParams params;
    std::int64_t total_steps = 0;
    LossTrajectory trajectory;
    JobStatus status = JobStatus::Pending;
    std::optional<LossPoint> best_val;

    std::int64_t scheduled_samples() const { return total_steps * params.per_adapter_batch_size; }
    /// Moves to `next`, throwing InvariantViolation on an illegal edge.
    void transition(JobStatus next);
    /// Folds a validation observation into best_val (strictly lower wins).
    void record_val(LossPoint p);
};

struct Task {
    int task_id = 0;
    int gpu_requirement = 1;
    std::vector<Job> jobs;
    std::int64_t total_samples = 0;
    std::optional<double> throughput;  // samples / second
    double duration_estimate = 0.0;    // seconds
    double arrival_time = 0.0;         // seconds
};

/// Axis values of a hyperparameter grid, in declaration order.
struct SearchGrid {
    std::vector<double> learning_rates;
    std::vector<int> ranks;
    std::vector<int> batch_sizes;

    std::size_t size() const { return learning_rates.size() * ranks.size() * batch_sizes.size(); }
};

/// Cartesian product of the grid; ids are assigned lexicographically over
/// (lr index, rank index, batch-size index) starting at `first_id`.
std::vector<Job> expand_search_space(const SearchGrid& grid, std::int64_t total_steps, int first_id = 0);

/// Deterministic synthetic trajectory: training loss at steps 1..total_steps,
/// validation loss at every multiple of eval_interval and at the final step.
/// EMA is left empty; the detector builds its own.
LossTrajectory generate_trajectory(const CurveProfile& profile, std::int64_t total_steps,
                                   std::int64_t eval_interval, std::uint64_t seed);

/// True when `step` is a validation step for a run of `total_steps`.
inline bool is_eval_step(std::int64_t step, std::int64_t total_steps, std::int64_t eval_interval) {
    return step == total_steps || (step > 0 && step % eval_interval == 0);
}

/// Recipe for planting curve kinds across a task's jobs. Fractions are of the
/// job count; whatever remains is Converging. One converging job receives
/// `best_floor` and is the ground-truth best configuration.
struct ProfileMix {
    double diverging = 0.0;
    double overfitting = 0.0;
    double underperforming = 0.0;

    double noise_sigma = 0.002;
    double val_gap = 0.03;
    double base_offset = 1.5;           // base_level = floor + base_offset
    double decay_lo = 2.5, decay_hi = 3.5;  // decay_rate = U(lo, hi) / total_steps
    double floor_lo = 0.8, floor_hi = 1.2;
    double best_floor = 0.6;
    double underperform_floor_lo = 1.6, underperform_floor_hi = 2.2;
    double break_lo = 0.02, break_hi = 0.8;  // fractions of total_steps
    double diverge_slope = 0.004;             // loss per step
    double overfit_slope = 0.002;

    void validate() const;
};

struct PlantedProfiles {
    std::vector<CurveProfile> profiles;
    std::size_t best_index = 0;
};

class Rng;

PlantedProfiles assign_profiles(std::size_t n_jobs, std::int64_t total_steps, const ProfileMix& mix, Rng& rng);

// ---- loss-trace ingestion ---------------------------------------------------

struct TraceRow {
    std::int64_t step = 0;
    double train_loss = 0.0;
    std::optional<double> val_loss;
};

struct IngestResult {
    LossTrajectory trajectory;
    /// Set when the input steps were not monotone and had to be sorted.
    bool resorted = false;
};

/// Validates and sorts rows, then fills train_ema using `ema_alpha`.
IngestResult ingest_trace(std::vector<TraceRow> rows, double ema_alpha = 0.1);

/// Parses the `step,train_loss,val_loss` CSV format (val_loss column optional,
/// empty cell = no evaluation).
std::vector<TraceRow> parse_trace_csv(std::string_view text);
/// Serialises train and val columns with 17 significant digits.
std::string serialize_trace_csv(const LossTrajectory& traj);

}  // namespace lorasched
