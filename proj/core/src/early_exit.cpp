// SPDX-License-Identifier: Apache-2.0
#include "lorasched/early_exit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "lorasched/errors.hpp"

namespace lorasched::early_exit {

void DetectorConfig::validate() const {
    require_input(alpha > 0.0 && alpha <= 1.0, fmt::format("EMA alpha must lie in (0, 1], got {}", alpha));
    require_input(window >= 2, fmt::format("slope window must be >= 2, got {}", window));
    require_input(std::isfinite(tau_slope) && std::isfinite(tau_gap), "detector thresholds must be finite");
    require_input(patience_div >= 1 && patience_ovf >= 1, "patience counters must be >= 1");
    require_input(warmup_ratio >= 0.0 && warmup_ratio <= 1.0, "warmup_ratio must lie in [0, 1]");
    require_input(warmup_select_ratio > 0.0 && warmup_select_ratio <= 1.0,
                  fmt::format("warmup_select_ratio must lie in (0, 1], got {}", warmup_select_ratio));
}

std::string_view to_string(ExitReason r) {
    switch (r) {
        case ExitReason::Diverging: return "diverging";
        case ExitReason::Overfitting: return "overfitting";
        case ExitReason::Underperforming: return "underperforming";
    }
    return "unknown";
}

double ema_update(std::optional<double> prev, double raw, double alpha) {
    require_input(alpha > 0.0 && alpha <= 1.0, fmt::format("EMA alpha must lie in (0, 1], got {}", alpha));
    require_input(std::isfinite(raw), "EMA input must be finite");
    if (!prev) return raw;
    // Same as alpha * raw + (1 - alpha) * prev, but exact on constant input.
    return *prev + alpha * (raw - *prev);
}

std::optional<double> linreg_slope(std::span<const double> points) {
    const auto n = points.size();
    if (n < 2) return std::nullopt;
    const double mean_x = static_cast<double>(n - 1) / 2.0;
    const double mean_y = std::accumulate(points.begin(), points.end(), 0.0) / static_cast<double>(n);
    double sxy = 0.0;
    double sxx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = static_cast<double>(i) - mean_x;
        sxy += dx * (points[i] - mean_y);
        sxx += dx * dx;
    }
    return sxy / sxx;
}

namespace {

std::vector<double> tail_values(const std::vector<LossPoint>& hist, std::size_t w) {
    std::vector<double> out;
    out.reserve(w);
    for (auto it = hist.end() - static_cast<std::ptrdiff_t>(w); it != hist.end(); ++it) out.push_back(it->loss);
    return out;
}

}  // namespace

Observation observe(DetectorState& state, const DetectorConfig& cfg, LossPoint ema_train, LossPoint val,
                    bool overfitting_enabled) {
    state.ema_history.push_back(ema_train);
    state.val_history.push_back(val);

    Observation obs;
    const auto w = static_cast<std::size_t>(cfg.window);

    // Divergence: both trends rising for p_div consecutive evaluations.
    if (state.ema_history.size() >= w && state.val_history.size() >= w) {
        const auto tr = tail_values(state.ema_history, w);
        const auto va = tail_values(state.val_history, w);
        obs.slope_train = linreg_slope(tr);
        obs.slope_val = linreg_slope(va);
        const bool rising = *obs.slope_train >= cfg.tau_slope && *obs.slope_val >= cfg.tau_slope;
        state.cnt_div = rising ? state.cnt_div + 1 : 0;
        if (state.cnt_div >= cfg.patience_div) {
            obs.decision = ExitDecision::exit_with(ExitReason::Diverging);
            obs.cnt_div = state.cnt_div;
            obs.cnt_ovf = state.cnt_ovf;
            return obs;
        }
    }

    // Overfitting: sustained relative gap between raw val and smoothed train.
    if (overfitting_enabled) {
        if (ema_train.loss <= 0.0) {
            obs.gap_undefined = true;
            ++state.undefined_gap_count;
            state.cnt_ovf = 0;
        } else {
            obs.gap = (val.loss - ema_train.loss) / ema_train.loss;
            state.cnt_ovf = *obs.gap > cfg.tau_gap ? state.cnt_ovf + 1 : 0;
            if (state.cnt_ovf >= cfg.patience_ovf) {
                const auto best = std::min_element(
                    state.val_history.begin(), state.val_history.end(),
                    [](const LossPoint& a, const LossPoint& b) { return a.loss < b.loss; });
                obs.decision = ExitDecision::exit_with(ExitReason::Overfitting, best->step);
            }
        }
    }
    obs.cnt_div = state.cnt_div;
    obs.cnt_ovf = state.cnt_ovf;
    return obs;
}

double Detector::on_train(double raw_loss) {
    state_.ema_last = ema_update(state_.ema_last, raw_loss, cfg_.alpha);
    return *state_.ema_last;
}

Observation Detector::on_eval(std::int64_t step, double val_loss, bool overfitting_enabled) {
    check_invariant(state_.ema_last.has_value(), "evaluation before any training loss was observed");
    return observe(state_, cfg_, LossPoint{step, *state_.ema_last}, LossPoint{step, val_loss}, overfitting_enabled);
}

std::size_t retained_count(double ratio, std::size_t n) {
    const double x = ratio * static_cast<double>(n);
    const double nearest = std::round(x);
    if (std::abs(x - nearest) <= 1e-9 * std::max(1.0, x)) return static_cast<std::size_t>(nearest);
    return static_cast<std::size_t>(std::ceil(x));
}

WarmupSelection warmup_select(std::vector<WarmupCandidate> survivors, double ratio) {
    require_input(ratio > 0.0 && ratio <= 1.0, fmt::format("warmup selection ratio must lie in (0, 1], got {}", ratio));
    WarmupSelection out;
    if (survivors.empty()) return out;
    std::sort(survivors.begin(), survivors.end(), [](const WarmupCandidate& a, const WarmupCandidate& b) {
        if (a.last_val != b.last_val) return a.last_val < b.last_val;
        return a.job_id < b.job_id;
    });
    const auto k = std::min(retained_count(ratio, survivors.size()), survivors.size());
    for (std::size_t i = 0; i < survivors.size(); ++i) {
        (i < k ? out.kept : out.evicted).push_back(survivors[i].job_id);
    }
    return out;
}

std::vector<double> average_ranks(std::span<const double> values) {
    const auto n = values.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values[idx[j + 1]] == values[idx[i]]) ++j;
        const double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

std::optional<double> spearman_rho(std::span<const double> x, std::span<const double> y) {
    require_input(x.size() == y.size(), fmt::format("spearman: length mismatch ({} vs {})", x.size(), y.size()));
    require_input(x.size() >= 2, "spearman: need at least two observations");
    const auto rx = average_ranks(x);
    const auto ry = average_ranks(y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return std::nullopt;
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

namespace {

// Indices of the k smallest values, ties resolved by lower job id.
std::vector<int> top_k(const std::vector<std::pair<double, int>>& scored, std::size_t k) {
    auto sorted = scored;
    std::sort(sorted.begin(), sorted.end());
    std::vector<int> ids;
    for (std::size_t i = 0; i < k && i < sorted.size(); ++i) ids.push_back(sorted[i].second);
    std::sort(ids.begin(), ids.end());
    return ids;
}

}  // namespace

std::vector<WarmupMetrics> warmup_reliability(std::span<const RunOutcome> runs, std::int64_t total_steps,
                                              std::span<const double> fractions) {
    require_input(!runs.empty(), "warmup reliability needs at least one trajectory");
    require_input(total_steps >= 1, "total_steps must be >= 1");

    std::vector<std::pair<double, int>> final_scores;
    for (const auto& r : runs) {
        auto best = r.trajectory.best_val();
        require_input(best.has_value(), fmt::format("job {} has no validation points", r.job_id));
        final_scores.emplace_back(best->loss, r.job_id);
    }
    const std::size_t quartile = std::max<std::size_t>(1, retained_count(0.25, runs.size()));
    const auto true_top = top_k(final_scores, quartile);
    const int true_best = top_k(final_scores, 1).front();

    std::vector<WarmupMetrics> out;
    for (double f : fractions) {
        WarmupMetrics m;
        m.fraction = f;
        const double horizon = f * static_cast<double>(total_steps);
        std::vector<std::pair<double, int>> early_scores;
        for (const auto& r : runs) {
            const LossPoint* last = nullptr;
            for (const auto& p : r.trajectory.val) {
                if (static_cast<double>(p.step) <= horizon + 1e-9) last = &p;
                else break;
            }
            if (!last) {
                m.skipped = true;
                break;
            }
            early_scores.emplace_back(last->loss, r.job_id);
        }
        if (!m.skipped) {
            std::vector<double> early, final_;
            for (std::size_t i = 0; i < runs.size(); ++i) {
                early.push_back(early_scores[i].first);
                final_.push_back(final_scores[i].first);
            }
            if (runs.size() >= 2) m.rho = spearman_rho(early, final_);
            const auto predicted = top_k(early_scores, quartile);
            std::vector<int> both;
            std::set_intersection(predicted.begin(), predicted.end(), true_top.begin(), true_top.end(),
                                  std::back_inserter(both));
            m.top_quartile_coverage = static_cast<double>(both.size()) / static_cast<double>(true_top.size());
            m.best_in_top_quartile = std::binary_search(predicted.begin(), predicted.end(), true_best);
        }
        out.push_back(m);
    }
    return out;
}

}  // namespace lorasched::early_exit
