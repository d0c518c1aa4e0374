// SPDX-License-Identifier: Apache-2.0
#include "lorasched/inter_sched.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "lorasched/errors.hpp"
#include "resource_profile.hpp"

namespace lorasched::inter {

Micros to_micros(double seconds) {
    require_input(std::isfinite(seconds) && seconds >= 0.0, fmt::format("invalid duration {} s", seconds));
    const double us = seconds * static_cast<double>(kMicrosPerSecond);
    require_input(us < 9.0e18, fmt::format("duration {} s is out of range", seconds));
    // Within a nanosecond of a whole microsecond counts as exact, so 1.5 s does
    // not become 1500001 us through representation error.
    const double nearest = std::round(us);
    if (std::abs(us - nearest) < 1e-3) return static_cast<Micros>(nearest);
    return static_cast<Micros>(std::ceil(us));
}

double estimate_duration(double total_samples, double throughput) {
    require_input(std::isfinite(throughput) && throughput > 0.0, "throughput must be > 0");
    require_input(std::isfinite(total_samples) && total_samples >= 0.0, "total_samples must be >= 0");
    return total_samples / throughput;
}

const Assignment* SchedulePlan::find(int task_id) const {
    for (const auto& a : assignments) {
        if (a.task_id == task_id) return &a;
    }
    return nullptr;
}

void SchedInstance::validate() const {
    require_input(G >= 1, "G must be >= 1");
    std::set<int> ids;
    for (const auto& t : tasks) {
        require_input(ids.insert(t.task_id).second, fmt::format("duplicate task_id {}", t.task_id));
        require_input(t.gpus >= 1, fmt::format("task {}: gpus must be >= 1", t.task_id));
        require_input(t.gpus <= G, fmt::format("task {}: needs {} GPUs but the cluster has {}", t.task_id, t.gpus, G));
        require_input(t.duration > 0, fmt::format("task {}: duration must be > 0", t.task_id));
    }
    std::set<int> used;
    for (const auto& p : pinned) {
        require_input(ids.insert(p.task_id).second, fmt::format("duplicate task_id {}", p.task_id));
        require_input(!p.gpu_ids.empty(), fmt::format("pinned task {} has no GPUs", p.task_id));
        require_input(p.remaining >= 0, fmt::format("pinned task {}: negative remaining time", p.task_id));
        for (int g : p.gpu_ids) {
            require_input(g >= 0 && g < G, fmt::format("pinned task {}: GPU {} out of range", p.task_id, g));
            require_input(used.insert(g).second, fmt::format("pinned task {}: GPU {} already pinned", p.task_id, g));
        }
    }
}

namespace {

struct Best {
    Micros makespan = std::numeric_limits<Micros>::max();
    std::vector<Micros> starts;

    bool improved_by(Micros c, const std::vector<Micros>& s) const {
        if (c != makespan) return c < makespan;
        return s < starts;
    }
};

// Free tasks sorted by task_id, the order that defines lexicographic comparison.
struct Prepared {
    int G = 1;
    std::vector<SchedTask> tasks;
    ResourceProfile base;
    Micros pinned_end = 0;
};

Prepared prepare(const SchedInstance& inst) {
    Prepared p{inst.G, inst.tasks, ResourceProfile(inst.G), 0};
    std::sort(p.tasks.begin(), p.tasks.end(), [](const auto& a, const auto& b) { return a.task_id < b.task_id; });
    for (const auto& pin : inst.pinned) {
        if (pin.remaining > 0) p.base.add(0, pin.remaining, static_cast<int>(pin.gpu_ids.size()));
        p.pinned_end = std::max(p.pinned_end, pin.remaining);
    }
    return p;
}

// Serial schedule generation: each task in list order at its earliest feasible start.
std::pair<Micros, std::vector<Micros>> serial_sgs(const Prepared& p, const std::vector<std::size_t>& order) {
    ResourceProfile prof = p.base;
    std::vector<Micros> starts(p.tasks.size(), 0);
    Micros c = p.pinned_end;
    for (auto j : order) {
        const auto& t = p.tasks[j];
        const Micros s = prof.earliest_fit(0, t.duration, t.gpus);
        prof.add(s, s + t.duration, t.gpus);
        starts[j] = s;
        c = std::max(c, s + t.duration);
    }
    return {c, starts};
}

// GPU ids by first fit in (start, task_id) order. Pinned tasks keep their sets.
SchedulePlan materialize(const SchedInstance& inst, const Prepared& p, const std::vector<Micros>& starts) {
    SchedulePlan plan;
    std::vector<Micros> gpu_free_at(static_cast<std::size_t>(inst.G), 0);
    for (const auto& pin : inst.pinned) {
        Assignment a{pin.task_id, 0, pin.remaining, pin.gpu_ids, true};
        std::sort(a.gpu_ids.begin(), a.gpu_ids.end());
        for (int g : a.gpu_ids) gpu_free_at[static_cast<std::size_t>(g)] = pin.remaining;
        plan.assignments.push_back(std::move(a));
        plan.makespan = std::max(plan.makespan, pin.remaining);
    }
    std::vector<std::size_t> order(p.tasks.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) {
        if (starts[a] != starts[b]) return starts[a] < starts[b];
        return p.tasks[a].task_id < p.tasks[b].task_id;
    });
    for (auto j : order) {
        const auto& t = p.tasks[j];
        Assignment a{t.task_id, starts[j], starts[j] + t.duration, {}, false};
        for (int g = 0; g < inst.G && static_cast<int>(a.gpu_ids.size()) < t.gpus; ++g) {
            if (gpu_free_at[static_cast<std::size_t>(g)] <= a.start) a.gpu_ids.push_back(g);
        }
        check_invariant(static_cast<int>(a.gpu_ids.size()) == t.gpus,
                        fmt::format("task {}: not enough free GPUs at t={}", t.task_id, a.start));
        for (int g : a.gpu_ids) gpu_free_at[static_cast<std::size_t>(g)] = a.end;
        plan.makespan = std::max(plan.makespan, a.end);
        plan.assignments.push_back(std::move(a));
    }
    std::sort(plan.assignments.begin(), plan.assignments.end(),
              [](const auto& a, const auto& b) { return a.task_id < b.task_id; });
    return plan;
}

// Depth-first search over serial-schedule lists whose start times are
// non-decreasing, ties in index order. Every active schedule has exactly one
// such list (its tasks sorted by start), and the lexicographically smallest
// optimal start vector is active, so the search finds it.
class BranchAndBound {
public:
    BranchAndBound(const Prepared& p, Best incumbent, std::chrono::steady_clock::time_point deadline)
        : p_(p), best_(std::move(incumbent)), deadline_(deadline) {
        const auto n = p_.tasks.size();
        starts_.assign(n, 0);
        placed_.assign(n, false);
        prev_twin_.assign(n, -1);
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t i = j; i-- > 0;) {
                if (p_.tasks[i].duration == p_.tasks[j].duration && p_.tasks[i].gpus == p_.tasks[j].gpus) {
                    prev_twin_[j] = static_cast<int>(i);
                    break;
                }
            }
        }
    }

    void run() { dfs(p_.base, 0, 0, -1, p_.pinned_end); }

    const Best& best() const { return best_; }
    bool timed_out() const { return timed_out_; }
    std::uint64_t nodes() const { return nodes_; }

private:
    void dfs(const ResourceProfile& prof, std::size_t depth, Micros t_last, int last_idx, Micros cur_c) {
        if (timed_out_) return;
        if ((++nodes_ & 0x3ff) == 0 && std::chrono::steady_clock::now() > deadline_) {
            timed_out_ = true;
            return;
        }
        const auto n = p_.tasks.size();
        if (depth == n) {
            if (best_.improved_by(cur_c, starts_)) {
                best_.makespan = cur_c;
                best_.starts = starts_;
            }
            return;
        }

        struct Cand {
            Micros e0;
            std::size_t j;
        };
        std::vector<Cand> cands;
        std::vector<Micros> lex_floor = starts_;
        Micros lb = cur_c;
        Micros big_sum = 0;
        std::int64_t area = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (placed_[j]) continue;
            const auto& t = p_.tasks[j];
            const Micros e0 = prof.earliest_fit(0, t.duration, t.gpus);
            // A slot that closes before t_last stays open forever; the list
            // generator would put the task there, so no canonical list extends this node.
            if (e0 + t.duration <= t_last) return;
            const Micros ef = e0 >= t_last ? e0 : prof.earliest_fit(t_last, t.duration, t.gpus);
            lb = std::max(lb, ef + t.duration);
            lex_floor[j] = ef;
            area += static_cast<std::int64_t>(t.duration) * t.gpus;
            if (2 * t.gpus > p_.G) big_sum += t.duration;
            const bool twin_ok = prev_twin_[j] < 0 || placed_[static_cast<std::size_t>(prev_twin_[j])];
            if (twin_ok && e0 >= t_last && (e0 > t_last || static_cast<int>(j) > last_idx)) cands.push_back({e0, j});
        }
        lb = std::max(lb, t_last + big_sum);
        lb = std::max(lb, prof.area_completion(t_last, area));
        if (lb > best_.makespan) return;
        if (lb == best_.makespan && !(lex_floor < best_.starts)) return;

        std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
            if (a.e0 != b.e0) return a.e0 < b.e0;
            return a.j < b.j;
        });
        for (const auto& c : cands) {
            const auto& t = p_.tasks[c.j];
            ResourceProfile next = prof;
            next.add(c.e0, c.e0 + t.duration, t.gpus);
            placed_[c.j] = true;
            starts_[c.j] = c.e0;
            dfs(next, depth + 1, c.e0, static_cast<int>(c.j), std::max(cur_c, c.e0 + t.duration));
            placed_[c.j] = false;
            starts_[c.j] = 0;
            if (timed_out_) return;
        }
    }

    const Prepared& p_;
    Best best_;
    std::chrono::steady_clock::time_point deadline_;
    std::vector<Micros> starts_;
    std::vector<bool> placed_;
    std::vector<int> prev_twin_;
    std::uint64_t nodes_ = 0;
    bool timed_out_ = false;
};

}  // namespace

SchedulePlan solve_exact(const SchedInstance& inst, const SolveOptions& opts) {
    inst.validate();
    const Prepared p = prepare(inst);
    const auto n = p.tasks.size();

    // Incumbent from a handful of list orders.
    Best inc;
    std::vector<std::size_t> ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    auto try_order = [&](auto key) {
        auto order = ids;
        std::stable_sort(order.begin(), order.end(), key);
        auto [c, s] = serial_sgs(p, order);
        if (inc.starts.empty() || inc.improved_by(c, s)) {
            inc.makespan = c;
            inc.starts = std::move(s);
        }
    };
    const auto& T = p.tasks;
    try_order([&](auto a, auto b) { return T[a].duration > T[b].duration; });
    try_order([&](auto a, auto b) { return T[a].duration * T[a].gpus > T[b].duration * T[b].gpus; });
    try_order([&](auto a, auto b) { return T[a].gpus > T[b].gpus; });
    try_order([&](auto a, auto b) { return T[a].duration < T[b].duration; });
    try_order([](auto a, auto b) { return a < b; });

    const auto deadline = std::chrono::steady_clock::now() +
                          std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                              std::chrono::duration<double>(opts.time_limit_seconds));
    BranchAndBound bb(p, inc, deadline);
    bb.run();

    SchedulePlan plan = materialize(inst, p, bb.best().starts);
    plan.optimal = !bb.timed_out();
    plan.nodes = bb.nodes();
    check_invariant(plan.makespan == bb.best().makespan, "plan makespan disagrees with search result");
    return plan;
}

SchedulePlan solve_sjf(const SchedInstance& inst) {
    inst.validate();
    const Prepared p = prepare(inst);
    std::vector<std::size_t> order(p.tasks.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) {
        if (p.tasks[a].duration != p.tasks[b].duration) return p.tasks[a].duration < p.tasks[b].duration;
        return p.tasks[a].task_id < p.tasks[b].task_id;
    });
    ResourceProfile prof = p.base;
    std::vector<Micros> starts(p.tasks.size(), 0);
    Micros prev = 0;
    for (auto j : order) {
        const auto& t = p.tasks[j];
        const Micros s = prof.earliest_fit(prev, t.duration, t.gpus);
        prof.add(s, s + t.duration, t.gpus);
        starts[j] = s;
        prev = s;
    }
    SchedulePlan plan = materialize(inst, p, starts);
    plan.optimal = false;
    return plan;
}

SchedulePlan plan_from_starts(const SchedInstance& inst, const std::vector<Micros>& starts) {
    inst.validate();
    require_input(starts.size() == inst.tasks.size(), "one start time per task required");
    const Prepared p = prepare(inst);
    std::map<int, Micros> by_id;
    for (std::size_t i = 0; i < inst.tasks.size(); ++i) by_id[inst.tasks[i].task_id] = starts[i];
    std::vector<Micros> sorted;
    for (const auto& t : p.tasks) sorted.push_back(by_id.at(t.task_id));
    SchedulePlan plan = materialize(inst, p, sorted);
    check_plan(inst, plan);
    return plan;
}

Micros makespan_lower_bound(const SchedInstance& inst) {
    Micros lb = 0;
    std::int64_t area = 0;
    for (const auto& t : inst.tasks) {
        lb = std::max(lb, t.duration);
        area += static_cast<std::int64_t>(t.duration) * t.gpus;
    }
    for (const auto& p : inst.pinned) {
        lb = std::max(lb, p.remaining);
        area += static_cast<std::int64_t>(p.remaining) * static_cast<std::int64_t>(p.gpu_ids.size());
    }
    const std::int64_t G = inst.G;
    lb = std::max(lb, static_cast<Micros>((area + G - 1) / G));
    return lb;
}

void check_plan(const SchedInstance& inst, const SchedulePlan& plan) {
    std::map<int, const SchedTask*> free_tasks;
    std::map<int, const PinnedTask*> pins;
    for (const auto& t : inst.tasks) free_tasks[t.task_id] = &t;
    for (const auto& p : inst.pinned) pins[p.task_id] = &p;
    check_invariant(plan.assignments.size() == inst.tasks.size() + inst.pinned.size(),
                    "plan does not cover every task exactly once");

    std::set<int> seen;
    Micros cmax = 0;
    std::vector<std::vector<std::pair<Micros, Micros>>> per_gpu(static_cast<std::size_t>(inst.G));
    std::vector<std::pair<Micros, int>> deltas;
    for (const auto& a : plan.assignments) {
        check_invariant(seen.insert(a.task_id).second, fmt::format("task {} assigned twice", a.task_id));
        std::set<int> gset(a.gpu_ids.begin(), a.gpu_ids.end());
        check_invariant(gset.size() == a.gpu_ids.size(), fmt::format("task {}: repeated GPU id", a.task_id));
        if (auto it = pins.find(a.task_id); it != pins.end()) {
            std::set<int> want(it->second->gpu_ids.begin(), it->second->gpu_ids.end());
            check_invariant(a.pinned && a.start == 0 && a.end == it->second->remaining && gset == want,
                            fmt::format("pinned task {} was moved", a.task_id));
        } else {
            auto ft = free_tasks.find(a.task_id);
            check_invariant(ft != free_tasks.end(), fmt::format("unknown task {} in plan", a.task_id));
            check_invariant(!a.pinned && a.start >= 0 && a.end - a.start == ft->second->duration,
                            fmt::format("task {}: wrong interval", a.task_id));
            check_invariant(static_cast<int>(a.gpu_ids.size()) == ft->second->gpus,
                            fmt::format("task {}: wrong GPU count", a.task_id));
        }
        for (int g : a.gpu_ids) {
            check_invariant(g >= 0 && g < inst.G, fmt::format("task {}: GPU {} out of range", a.task_id, g));
            per_gpu[static_cast<std::size_t>(g)].emplace_back(a.start, a.end);
        }
        if (a.end > a.start) {
            deltas.emplace_back(a.start, static_cast<int>(a.gpu_ids.size()));
            deltas.emplace_back(a.end, -static_cast<int>(a.gpu_ids.size()));
        }
        cmax = std::max(cmax, a.end);
    }
    for (std::size_t g = 0; g < per_gpu.size(); ++g) {
        auto& iv = per_gpu[g];
        std::sort(iv.begin(), iv.end());
        for (std::size_t i = 1; i < iv.size(); ++i) {
            check_invariant(iv[i - 1].second <= iv[i].first, fmt::format("GPU {} runs two tasks at once", g));
        }
    }
    // Releases before acquisitions at equal times.
    std::sort(deltas.begin(), deltas.end());
    int used = 0;
    for (const auto& [t, d] : deltas) {
        used += d;
        check_invariant(used <= inst.G, fmt::format("capacity exceeded at t={}", t));
    }
    check_invariant(cmax == plan.makespan, "plan makespan is not the latest end time");
}

std::string to_string(ReplanTrigger t) {
    return t == ReplanTrigger::TaskArrival ? "task_arrival" : "task_completion";
}

SchedulePlan replan(const ClusterState& state, ReplanTrigger /*trigger*/, const SolveOptions& opts) {
    SchedInstance inst;
    inst.G = state.G;
    inst.tasks = state.queued;
    for (const auto& r : state.running) inst.pinned.push_back({r.task_id, r.gpu_ids, std::max<Micros>(0, r.remaining)});
    SchedulePlan rel = solve_exact(inst, opts);
    check_plan(inst, rel);

    SchedulePlan out = rel;
    out.makespan = state.now + rel.makespan;
    for (auto& a : out.assignments) {
        if (a.pinned) {
            const auto it = std::find_if(state.running.begin(), state.running.end(),
                                         [&](const auto& r) { return r.task_id == a.task_id; });
            a.start = it->start;
        } else {
            a.start += state.now;
        }
        a.end += state.now;
    }
    return out;
}

}  // namespace lorasched::inter
