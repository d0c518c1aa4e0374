// SPDX-License-Identifier: Apache-2.0
//
// Loss-aware early exit: EMA smoothing, windowed slope regression, divergence
// and overfitting detectors with patience counters, warmup-boundary selection,
// and the rank-correlation metrics used to judge warmup length.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "lorasched/workload.hpp"

namespace lorasched::early_exit {

struct DetectorConfig {
    double alpha = 0.1;
    int window = 2;
    double tau_slope = 0.001;
    double tau_gap = 0.1;
    int patience_div = 2;
    int patience_ovf = 2;
    double warmup_ratio = 0.05;
    double warmup_select_ratio = 0.25;

    void validate() const;
};

struct DetectorState {
    int cnt_div = 0;
    int cnt_ovf = 0;
    std::optional<double> ema_last;
    std::vector<LossPoint> val_history;
    std::vector<LossPoint> ema_history;
    /// Number of observations where the gap ratio was undefined (EMA <= 0).
    int undefined_gap_count = 0;
};

enum class ExitReason { Diverging, Overfitting, Underperforming };

std::string_view to_string(ExitReason r);

struct ExitDecision {
    bool exit = false;
    std::optional<ExitReason> reason;
    std::optional<std::int64_t> checkpoint_step;

    static ExitDecision cont() { return {}; }
    static ExitDecision exit_with(ExitReason r, std::optional<std::int64_t> ckpt = std::nullopt) {
        return {true, r, ckpt};
    }
};

/// Everything observe() computed, for decision-stream output.
struct Observation {
    ExitDecision decision;
    std::optional<double> slope_train;
    std::optional<double> slope_val;
    std::optional<double> gap;
    bool gap_undefined = false;
    int cnt_div = 0;
    int cnt_ovf = 0;
};

/// alpha * raw + (1 - alpha) * prev, or raw when there is no previous value.
double ema_update(std::optional<double> prev, double raw, double alpha);

/// OLS slope of `points` against indices 0..n-1. nullopt when n < 2.
std::optional<double> linreg_slope(std::span<const double> points);

/// One validation evaluation. Appends both points to the histories, runs the
/// divergence test, then (if enabled) the overfitting test. Overfitting is
/// disabled during warmup, where only divergence may end a job.
Observation observe(DetectorState& state, const DetectorConfig& cfg, LossPoint ema_train, LossPoint val,
                    bool overfitting_enabled = true);

/// Streaming wrapper: feed every raw training loss, then call on_eval at
/// validation steps.
class Detector {
public:
    explicit Detector(DetectorConfig cfg) : cfg_(cfg) { cfg_.validate(); }

    double on_train(double raw_loss);
    Observation on_eval(std::int64_t step, double val_loss, bool overfitting_enabled = true);

    const DetectorState& state() const { return state_; }
    const DetectorConfig& config() const { return cfg_; }

private:
    DetectorConfig cfg_;
    DetectorState state_;
};

struct WarmupCandidate {
    int job_id = 0;
    double last_val = 0.0;
};

struct WarmupSelection {
    std::vector<int> kept;
    std::vector<int> evicted;
};

/// ceil(ratio * n), robust to representation error in ratio * n.
std::size_t retained_count(double ratio, std::size_t n);

/// Rank by last validation loss ascending (ties: lower job_id) and keep the
/// first ceil(ratio * n).
WarmupSelection warmup_select(std::vector<WarmupCandidate> survivors, double ratio);

/// Average ranks (1-based) with ties sharing the mean of their positions.
std::vector<double> average_ranks(std::span<const double> values);

/// Spearman rank correlation with average-rank tie handling. nullopt when
/// either side has zero rank variance. Throws InputError on size mismatch or n < 2.
std::optional<double> spearman_rho(std::span<const double> x, std::span<const double> y);

struct WarmupMetrics {
    double fraction = 0.0;
    std::optional<double> rho;
    double top_quartile_coverage = 0.0;
    bool best_in_top_quartile = false;
    bool skipped = false;
};

struct RunOutcome {
    int job_id = 0;
    LossTrajectory trajectory;
};

/// For each warmup fraction f, compares the ranking by the last validation loss
/// at or before f * total_steps against the ranking by final best validation
/// loss. Fractions with a job lacking any validation point by then are skipped.
std::vector<WarmupMetrics> warmup_reliability(std::span<const RunOutcome> runs, std::int64_t total_steps,
                                              std::span<const double> fractions);

}  // namespace lorasched::early_exit
