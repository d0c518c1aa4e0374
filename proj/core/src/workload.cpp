// SPDX-License-Identifier: Apache-2.0
#include "lorasched/workload.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "lorasched/errors.hpp"
#include "lorasched/rng.hpp"

namespace lorasched {

void HyperParams::validate() const {
    require_input(std::isfinite(learning_rate) && learning_rate > 0.0,
                  fmt::format("learning rate must be positive, got {}", learning_rate));
    require_input(lora_rank > 0, fmt::format("LoRA rank must be positive, got {}", lora_rank));
    require_input(per_adapter_batch_size > 0,
                  fmt::format("per-adapter batch size must be positive, got {}", per_adapter_batch_size));
}

std::optional<double> LossTrajectory::val_at(std::int64_t step) const {
    auto it = std::lower_bound(val.begin(), val.end(), step,
                               [](const LossPoint& p, std::int64_t s) { return p.step < s; });
    if (it != val.end() && it->step == step) return it->loss;
    return std::nullopt;
}

std::optional<LossPoint> LossTrajectory::best_val() const {
    if (val.empty()) return std::nullopt;
    LossPoint best = val.front();
    for (const auto& p : val) {
        if (p.loss < best.loss) best = p;
    }
    return best;
}

std::string_view to_string(JobStatus s) {
    switch (s) {
        case JobStatus::Pending: return "pending";
        case JobStatus::Warmup: return "warmup";
        case JobStatus::Training: return "training";
        case JobStatus::ExitedDiverging: return "exited_diverging";
        case JobStatus::ExitedOverfitting: return "exited_overfitting";
        case JobStatus::ExitedUnderperforming: return "exited_underperforming";
        case JobStatus::Completed: return "completed";
    }
    return "unknown";
}

bool is_terminal(JobStatus s) {
    return s == JobStatus::ExitedDiverging || s == JobStatus::ExitedOverfitting ||
           s == JobStatus::ExitedUnderperforming || s == JobStatus::Completed;
}

bool is_valid_transition(JobStatus from, JobStatus to) {
    switch (from) {
        case JobStatus::Pending: return to == JobStatus::Warmup;
        case JobStatus::Warmup:
            return to == JobStatus::Training || to == JobStatus::ExitedUnderperforming ||
                   to == JobStatus::ExitedDiverging;
        case JobStatus::Training:
            return to == JobStatus::ExitedDiverging || to == JobStatus::ExitedOverfitting ||
                   to == JobStatus::Completed;
        default: return false;
    }
}

void Job::transition(JobStatus next) {
    check_invariant(is_valid_transition(status, next),
                    fmt::format("job {}: illegal status transition {} -> {}", job_id, to_string(status),
                                to_string(next)));
    status = next;
}

void Job::record_val(LossPoint p) {
    if (!best_val || p.loss < best_val->loss) best_val = p;
}

std::string_view to_string(CurveKind k) {
    switch (k) {
        case CurveKind::Converging: return "converging";
        case CurveKind::Diverging: return "diverging";
        case CurveKind::Overfitting: return "overfitting";
        case CurveKind::Underperforming: return "underperforming";
    }
    return "unknown";
}

CurveKind curve_kind_from_string(std::string_view s) {
    if (s == "converging") return CurveKind::Converging;
    if (s == "diverging") return CurveKind::Diverging;
    if (s == "overfitting") return CurveKind::Overfitting;
    if (s == "underperforming") return CurveKind::Underperforming;
    throw InputError(fmt::format("unknown curve kind '{}'", s));
}

namespace {

double converging_train(const CurveProfile& p, double step) {
    return p.floor + (p.base_level - p.floor) * std::exp(-p.decay_rate * step);
}

}  // namespace

double CurveProfile::train_at(std::int64_t step) const {
    const auto s = static_cast<double>(step);
    if (kind == CurveKind::Diverging && step > break_step) {
        return converging_train(*this, static_cast<double>(break_step)) +
               post_break_slope * static_cast<double>(step - break_step);
    }
    return converging_train(*this, s);
}

double CurveProfile::val_at(std::int64_t step) const {
    const bool bent = (kind == CurveKind::Diverging || kind == CurveKind::Overfitting) && step > break_step;
    if (bent) {
        return converging_train(*this, static_cast<double>(break_step)) * (1.0 + val_gap) +
               post_break_slope * static_cast<double>(step - break_step);
    }
    return converging_train(*this, static_cast<double>(step)) * (1.0 + val_gap);
}

void CurveProfile::validate(std::int64_t total_steps) const {
    require_input(noise_sigma >= 0.0 && std::isfinite(noise_sigma),
                  fmt::format("noise_sigma must be >= 0, got {}", noise_sigma));
    require_input(std::isfinite(base_level) && std::isfinite(floor) && std::isfinite(decay_rate) &&
                      std::isfinite(post_break_slope) && std::isfinite(val_gap),
                  "curve profile parameters must be finite");
    require_input(floor > 0.0, "curve floor must be positive");
    if (kind == CurveKind::Diverging || kind == CurveKind::Overfitting) {
        require_input(break_step >= 0 && break_step < total_steps,
                      fmt::format("{} profile needs 0 <= break_step < total_steps ({}), got {}", to_string(kind),
                                  total_steps, break_step));
    }
}

void ProfileMix::validate() const {
    for (double f : {diverging, overfitting, underperforming}) {
        require_input(f >= 0.0 && f <= 1.0, "profile mix fractions must lie in [0, 1]");
    }
    require_input(diverging + overfitting + underperforming < 1.0,
                  "profile mix must leave room for at least one converging job");
    require_input(noise_sigma >= 0.0, "noise_sigma must be >= 0");
    require_input(floor_lo <= floor_hi && underperform_floor_lo <= underperform_floor_hi && decay_lo <= decay_hi &&
                      break_lo <= break_hi,
                  "profile mix ranges must be ordered lo <= hi");
    require_input(best_floor > 0.0, "best_floor must be positive");
}

std::vector<Job> expand_search_space(const SearchGrid& grid, std::int64_t total_steps, int first_id) {
    require_input(!grid.learning_rates.empty(), "search space axis 'lr' is empty");
    require_input(!grid.ranks.empty(), "search space axis 'rank' is empty");
    require_input(!grid.batch_sizes.empty(), "search space axis 'batch_size' is empty");
    require_input(total_steps >= 1, fmt::format("total_steps must be >= 1, got {}", total_steps));

    std::vector<Job> jobs;
    jobs.reserve(grid.size());
    int id = first_id;
    for (double lr : grid.learning_rates) {
        for (int rank : grid.ranks) {
            for (int bs : grid.batch_sizes) {
                Job job;
                job.job_id = id++;
                job.params = HyperParams{lr, rank, bs};
                job.params.validate();
                job.total_steps = total_steps;
                jobs.push_back(std::move(job));
            }
        }
    }
    return jobs;
}

LossTrajectory generate_trajectory(const CurveProfile& profile, std::int64_t total_steps,
                                   std::int64_t eval_interval, std::uint64_t seed) {
    require_input(total_steps >= 1, "total_steps must be >= 1");
    require_input(eval_interval >= 1, "eval_interval must be >= 1");
    profile.validate(total_steps);

    // Noise is Gaussian on log-loss, so a noisy loss is loss * exp(sigma * z).
    constexpr double kMinLoss = 1e-9;
    Rng rng(seed);
    auto perturb = [&](double clean) {
        if (profile.noise_sigma == 0.0) return std::max(clean, kMinLoss);
        const double z = rng.normal();
        return std::max(clean * std::exp(profile.noise_sigma * z), kMinLoss);
    };

    LossTrajectory traj;
    traj.train.reserve(static_cast<std::size_t>(total_steps));
    for (std::int64_t s = 1; s <= total_steps; ++s) {
        traj.train.push_back({s, perturb(profile.train_at(s))});
        if (is_eval_step(s, total_steps, eval_interval)) {
            traj.val.push_back({s, perturb(profile.val_at(s))});
        }
    }
    return traj;
}

PlantedProfiles assign_profiles(std::size_t n_jobs, std::int64_t total_steps, const ProfileMix& mix, Rng& rng) {
    mix.validate();
    require_input(n_jobs >= 1, "cannot plant profiles for an empty task");

    const auto count = [&](double f) { return static_cast<std::size_t>(std::llround(f * static_cast<double>(n_jobs))); };
    std::size_t n_div = count(mix.diverging);
    std::size_t n_ovf = count(mix.overfitting);
    std::size_t n_under = count(mix.underperforming);
    while (n_div + n_ovf + n_under >= n_jobs) {
        // Always keep at least one converging job to carry the best floor.
        if (n_under > 0) --n_under;
        else if (n_div > 0) --n_div;
        else --n_ovf;
    }

    std::vector<std::size_t> order(n_jobs);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = n_jobs; i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
        std::swap(order[i - 1], order[j]);
    }

    PlantedProfiles out;
    out.profiles.resize(n_jobs);
    const auto steps = static_cast<double>(total_steps);
    auto make_break = [&] {
        auto lo = static_cast<std::int64_t>(std::ceil(mix.break_lo * steps));
        auto hi = static_cast<std::int64_t>(std::floor(mix.break_hi * steps));
        lo = std::clamp<std::int64_t>(lo, 1, total_steps - 1);
        hi = std::clamp<std::int64_t>(hi, lo, total_steps - 1);
        return rng.uniform_int(lo, hi);
    };

    for (std::size_t pos = 0; pos < n_jobs; ++pos) {
        CurveProfile p;
        p.noise_sigma = mix.noise_sigma;
        p.val_gap = mix.val_gap;
        p.decay_rate = rng.uniform(mix.decay_lo, mix.decay_hi) / steps;
        p.floor = rng.uniform(mix.floor_lo, mix.floor_hi);
        if (pos < n_div) {
            p.kind = CurveKind::Diverging;
            p.break_step = make_break();
            p.post_break_slope = mix.diverge_slope;
        } else if (pos < n_div + n_ovf) {
            p.kind = CurveKind::Overfitting;
            p.break_step = make_break();
            p.post_break_slope = mix.overfit_slope;
        } else if (pos < n_div + n_ovf + n_under) {
            p.kind = CurveKind::Underperforming;
            p.floor = rng.uniform(mix.underperform_floor_lo, mix.underperform_floor_hi);
        } else {
            p.kind = CurveKind::Converging;
            if (pos == n_div + n_ovf + n_under) {
                p.floor = mix.best_floor;
                out.best_index = order[pos];
            }
        }
        p.base_level = p.floor + mix.base_offset;
        out.profiles[order[pos]] = p;
    }
    return out;
}

}  // namespace lorasched
