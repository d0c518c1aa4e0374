// SPDX-License-Identifier: Apache-2.0
#include "lorasched/intra_sched.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>

#include "lorasched/errors.hpp"

namespace lorasched::intra {

void MemoryModel::validate() const {
    require_input(std::isfinite(k0) && k0 >= 0.0, "memory.k0 must be finite and >= 0");
    require_input(std::isfinite(k1) && k1 >= 0.0, "memory.k1 must be finite and >= 0");
    require_input(seq_len >= 1, "memory.seq_len must be >= 1");
    require_input(std::isfinite(capacity) && capacity > 0.0, "memory.capacity must be > 0");
    require_input(safety_margin > 0.0 && safety_margin <= 1.0, "memory.safety_margin must be in (0, 1]");
}

MemoryFit fit_memory_model(std::span<const MemorySample> samples, std::int64_t seq_len) {
    require_input(seq_len >= 1, "seq_len must be >= 1");
    require_input(samples.size() >= 2, "memory fit needs at least two samples");
    std::set<std::int64_t> distinct;
    for (const auto& s : samples) {
        require_input(s.n_adapters >= 1 && s.batch_size >= 1, "memory sample needs N >= 1 and b >= 1");
        require_input(std::isfinite(s.measured_bytes), "memory sample is not finite");
        distinct.insert(s.total_batch());
    }
    require_input(distinct.size() >= 2, "memory fit is rank-deficient: all samples share one total batch");

    // Centered normal equations.
    const double n = static_cast<double>(samples.size());
    double mx = 0.0, my = 0.0;
    for (const auto& s : samples) {
        mx += static_cast<double>(s.total_batch() * seq_len);
        my += s.measured_bytes;
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (const auto& s : samples) {
        const double dx = static_cast<double>(s.total_batch() * seq_len) - mx;
        const double dy = s.measured_bytes - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    MemoryFit fit;
    fit.k1 = sxy / sxx;
    fit.k0 = my - fit.k1 * mx;
    double sse = 0.0;
    for (const auto& s : samples) {
        const double r = s.measured_bytes - (fit.k0 + fit.k1 * static_cast<double>(s.total_batch() * seq_len));
        sse += r * r;
    }
    fit.r_squared = syy > 0.0 ? 1.0 - sse / syy : 1.0;
    return fit;
}

BmaxResult find_bmax(const MeasureFn& measure, double capacity, double margin, std::int64_t limit) {
    require_input(capacity > 0.0, "capacity must be > 0");
    require_input(margin > 0.0 && margin <= 1.0, "margin must be in (0, 1]");
    const double budget = margin * capacity;
    BmaxResult res;
    auto fits = [&](std::int64_t b) {
        ++res.probes;
        return measure(b) <= budget;
    };
    if (!fits(1)) {
        throw InputError(fmt::format("nothing fits: measure(1) = {} exceeds budget {}", measure(1), budget));
    }
    std::int64_t lo = 1;  // fits
    std::int64_t hi = 2;
    while (hi <= limit && fits(hi)) {
        lo = hi;
        hi *= 2;
    }
    if (hi > limit) {
        res.b_max = lo;
        return res;
    }
    // lo fits, hi does not.
    while (hi - lo > 1) {
        const std::int64_t mid = lo + (hi - lo) / 2;
        if (fits(mid)) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    res.b_max = lo;
    return res;
}

std::vector<MemorySample> profile_grid(const MeasureFn& measure, std::int64_t b_max,
                                       std::span<const std::int64_t> b_values) {
    require_input(b_max >= 1, "B_max must be >= 1");
    std::vector<MemorySample> out;
    for (auto b : b_values) {
        if (b > b_max) continue;
        const std::int64_t n_max = b_max / b;
        out.push_back({1, b, measure(b)});
        if (n_max > 1) out.push_back({n_max, b, measure(n_max * b)});
    }
    return out;
}

ExecutorState::ExecutorState(int rank_count, std::optional<std::size_t> max_jobs)
    : rank_count_(rank_count), max_jobs_(max_jobs) {
    require_input(rank_count >= 1, "executor needs at least one rank");
    require_input(!max_jobs || *max_jobs >= 1, "max_jobs must be >= 1");
    rank_batch_.assign(static_cast<std::size_t>(rank_count), 0);
}

bool ExecutorState::contains(int job_id) const {
    return std::any_of(resident_.begin(), resident_.end(), [&](const auto& r) { return r.job_id == job_id; });
}

int ExecutorState::least_loaded_rank() const {
    int best = 0;
    for (int r = 1; r < rank_count_; ++r) {
        if (rank_batch_[static_cast<std::size_t>(r)] < rank_batch_[static_cast<std::size_t>(best)]) best = r;
    }
    return best;
}

void ExecutorState::add(int job_id, std::int64_t batch_size, int rank) {
    check_invariant(rank >= 0 && rank < rank_count_, fmt::format("rank {} out of range", rank));
    check_invariant(!contains(job_id), fmt::format("job {} already resident", job_id));
    check_invariant(has_room(), "executor job limit exceeded");
    resident_.push_back({job_id, batch_size, rank});
    rank_batch_[static_cast<std::size_t>(rank)] += batch_size;
    total_batch_ += batch_size;
}

ResidentJob ExecutorState::remove(int job_id) {
    auto it = std::find_if(resident_.begin(), resident_.end(), [&](const auto& r) { return r.job_id == job_id; });
    check_invariant(it != resident_.end(), fmt::format("job {} is not resident", job_id));
    ResidentJob out = *it;
    resident_.erase(it);
    rank_batch_[static_cast<std::size_t>(out.rank)] -= out.batch_size;
    total_batch_ -= out.batch_size;
    return out;
}

std::map<int, std::vector<int>> ExecutorState::per_rank_assignment() const {
    std::map<int, std::vector<int>> out;
    for (int r = 0; r < rank_count_; ++r) out[r];
    for (const auto& j : resident_) out[j.rank].push_back(j.job_id);
    for (auto& [r, ids] : out) std::sort(ids.begin(), ids.end());
    return out;
}

std::size_t ExecutorState::batch_classes(int rank) const {
    std::set<std::int64_t> sizes;
    for (const auto& j : resident_) {
        if (j.rank == rank) sizes.insert(j.batch_size);
    }
    return sizes.size();
}

void ExecutorState::check() const {
    std::set<int> ids;
    std::vector<std::int64_t> sums(static_cast<std::size_t>(rank_count_), 0);
    std::int64_t total = 0;
    for (const auto& j : resident_) {
        check_invariant(ids.insert(j.job_id).second, fmt::format("job {} resident twice", j.job_id));
        check_invariant(j.rank >= 0 && j.rank < rank_count_, "resident job on unknown rank");
        sums[static_cast<std::size_t>(j.rank)] += j.batch_size;
        total += j.batch_size;
    }
    check_invariant(sums == rank_batch_ && total == total_batch_, "executor batch bookkeeping is inconsistent");
    check_invariant(!max_jobs_ || resident_.size() <= *max_jobs_, "executor job limit exceeded");
}

std::vector<Admission> admit(ExecutorState& state, std::span<const PendingJob> pending, const MemoryModel& model) {
    std::vector<PendingJob> order(pending.begin(), pending.end());
    std::sort(order.begin(), order.end(), [](const PendingJob& a, const PendingJob& b) {
        if (a.batch_size != b.batch_size) return a.batch_size > b.batch_size;
        return a.job_id < b.job_id;
    });
    std::vector<Admission> out;
    for (const auto& p : order) {
        if (!state.has_room()) break;
        if (state.contains(p.job_id)) continue;
        if (!model.fits(state.total_batch() + p.batch_size)) continue;
        const int rank = state.least_loaded_rank();
        state.add(p.job_id, p.batch_size, rank);
        out.push_back({p.job_id, p.batch_size, rank});
    }
    return out;
}

std::optional<Admission> backfill(ExecutorState& state, std::int64_t exited_batch_size,
                                  std::span<const PendingJob> queue, const MemoryModel& model) {
    if (!state.has_room()) return std::nullopt;
    const PendingJob* best = nullptr;
    auto better = [&](const PendingJob& c) {
        if (best == nullptr) return true;
        const bool c_same = c.batch_size == exited_batch_size;
        const bool b_same = best->batch_size == exited_batch_size;
        if (c_same != b_same) return c_same;
        if (c.batch_size != best->batch_size) return c.batch_size > best->batch_size;
        return c.job_id < best->job_id;
    };
    for (const auto& c : queue) {
        if (state.contains(c.job_id)) continue;
        if (!model.fits(state.total_batch() + c.batch_size)) continue;
        if (better(c)) best = &c;
    }
    if (best == nullptr) return std::nullopt;
    const int rank = state.least_loaded_rank();
    state.add(best->job_id, best->batch_size, rank);
    return Admission{best->job_id, best->batch_size, rank};
}

}  // namespace lorasched::intra
