// SPDX-License-Identifier: Apache-2.0
//
// Exhaustive makespan oracle. Deliberately shares no code with the branch and
// bound: starts come from a fixed grid and feasibility is re-checked from the
// interval list every time.
#include <algorithm>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "lorasched/errors.hpp"
#include "lorasched/inter_sched.hpp"

namespace lorasched::inter {

namespace {

struct Interval {
    Micros start;
    Micros end;
    int gpus;
};

// Usage changes only at interval starts going up, so checking every start
// point covers the maximum.
bool capacity_ok(const std::vector<Interval>& ivs, int G) {
    for (const auto& probe : ivs) {
        int used = 0;
        for (const auto& iv : ivs) {
            if (iv.start <= probe.start && probe.start < iv.end) used += iv.gpus;
        }
        if (used > G) return false;
    }
    return true;
}

class Oracle {
public:
    Oracle(const SchedInstance& inst, std::vector<Micros> grid) : inst_(inst), grid_(std::move(grid)) {
        const auto n = inst.tasks.size();
        order_.resize(n);
        std::iota(order_.begin(), order_.end(), 0);
        // Big tasks first: they constrain the rest the most.
        std::stable_sort(order_.begin(), order_.end(), [&](auto a, auto b) {
            const auto& x = inst.tasks[a];
            const auto& y = inst.tasks[b];
            return x.duration * x.gpus > y.duration * y.gpus;
        });
        for (const auto& p : inst.pinned) {
            if (p.remaining > 0) ivs_.push_back({0, p.remaining, static_cast<int>(p.gpu_ids.size())});
            pinned_end_ = std::max(pinned_end_, p.remaining);
        }
        starts_.assign(n, 0);
        // Everything back to back after the pins is always feasible.
        best_ = pinned_end_;
        for (const auto& t : inst.tasks) best_ += t.duration;
        best_starts_.assign(n, 0);
        Micros at = pinned_end_;
        for (auto j : order_) {
            best_starts_[j] = at;
            at += inst.tasks[j].duration;
        }
        floor_ = makespan_lower_bound(inst);
    }

    void run() { dfs(0, pinned_end_); }

    OracleResult result() const { return {best_, best_starts_}; }

private:
    void dfs(std::size_t k, Micros cur_end) {
        if (best_ == floor_) return;
        if (k == order_.size()) {
            if (cur_end < best_) {
                best_ = cur_end;
                best_starts_ = starts_;
            }
            return;
        }
        const auto j = order_[k];
        const auto& t = inst_.tasks[j];
        // Interchangeable tasks take non-decreasing starts.
        Micros min_start = 0;
        for (std::size_t q = 0; q < k; ++q) {
            const auto& o = inst_.tasks[order_[q]];
            if (o.duration == t.duration && o.gpus == t.gpus) min_start = std::max(min_start, starts_[order_[q]]);
        }
        for (Micros s : grid_) {
            if (s < min_start) continue;
            if (s + t.duration >= best_) break;
            ivs_.push_back({s, s + t.duration, t.gpus});
            if (capacity_ok(ivs_, inst_.G)) {
                starts_[j] = s;
                dfs(k + 1, std::max(cur_end, s + t.duration));
            }
            ivs_.pop_back();
            if (best_ == floor_) return;
        }
    }

    const SchedInstance& inst_;
    std::vector<Micros> grid_;
    std::vector<std::size_t> order_;
    std::vector<Interval> ivs_;
    std::vector<Micros> starts_;
    std::vector<Micros> best_starts_;
    Micros pinned_end_ = 0;
    Micros best_ = 0;
    Micros floor_ = 0;
};

}  // namespace

OracleResult brute_force_oracle(const SchedInstance& inst, std::size_t max_tasks) {
    require_input(inst.tasks.size() + inst.pinned.size() <= max_tasks,
                  fmt::format("brute-force oracle is limited to {} tasks (got {})", max_tasks,
                              inst.tasks.size() + inst.pinned.size()));
    inst.validate();

    // Some optimal schedule is left-shifted: every start is 0 or the end of
    // another task, hence a sum of a subset of the durations.
    std::vector<Micros> durations;
    for (const auto& t : inst.tasks) durations.push_back(t.duration);
    for (const auto& p : inst.pinned) durations.push_back(p.remaining);
    std::set<Micros> sums{0};
    for (Micros d : durations) {
        std::vector<Micros> next(sums.begin(), sums.end());
        for (Micros s : next) sums.insert(s + d);
    }
    Oracle o(inst, std::vector<Micros>(sums.begin(), sums.end()));
    o.run();
    return o.result();
}

}  // namespace lorasched::inter
