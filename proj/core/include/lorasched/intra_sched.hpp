// SPDX-License-Identifier: Apache-2.0
//
// Admission control inside one executor, driven by a linear memory model
// M(B) = k0 + k1 * B * L over the total resident batch B.
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

namespace lorasched::intra {

struct MemoryModel {
    double k0 = 0.0;  // bytes
    double k1 = 0.0;  // bytes per token
    std::int64_t seq_len = 512;
    double capacity = 0.0;  // bytes
    double safety_margin = 0.9;

    double predict(std::int64_t total_batch) const { return k0 + k1 * static_cast<double>(total_batch * seq_len); }
    double budget() const { return safety_margin * capacity; }
    bool fits(std::int64_t total_batch) const { return predict(total_batch) <= budget(); }

    void validate() const;
};

struct MemorySample {
    std::int64_t n_adapters = 1;
    std::int64_t batch_size = 1;  // per adapter
    double measured_bytes = 0.0;

    std::int64_t total_batch() const { return n_adapters * batch_size; }
};

struct MemoryFit {
    double k0 = 0.0;
    double k1 = 0.0;
    double r_squared = 1.0;
};

/// Least squares of measured = k0 + k1 * (N*b) * seq_len. Needs two distinct N*b.
MemoryFit fit_memory_model(std::span<const MemorySample> samples, std::int64_t seq_len);

using MeasureFn = std::function<double(std::int64_t total_batch)>;

struct BmaxResult {
    std::int64_t b_max = 0;
    int probes = 0;
};

/// Largest B with measure(B) <= margin * capacity, by doubling then bisection.
/// `measure` must be non-decreasing. Throws InputError when B = 1 does not fit.
BmaxResult find_bmax(const MeasureFn& measure, double capacity, double margin,
                     std::int64_t limit = std::int64_t{1} << 40);

inline constexpr std::int64_t kProfileBatchSizes[] = {1, 2, 4, 8, 16, 32};

/// For each b with b <= B_max, samples N = 1 and N = floor(B_max / b).
std::vector<MemorySample> profile_grid(const MeasureFn& measure, std::int64_t b_max,
                                       std::span<const std::int64_t> b_values = kProfileBatchSizes);

struct ResidentJob {
    int job_id = 0;
    std::int64_t batch_size = 1;
    int rank = 0;
};

struct PendingJob {
    int job_id = 0;
    std::int64_t batch_size = 1;
};

class ExecutorState {
public:
    explicit ExecutorState(int rank_count = 1, std::optional<std::size_t> max_jobs = std::nullopt);

    int rank_count() const { return rank_count_; }
    std::optional<std::size_t> max_jobs() const { return max_jobs_; }
    std::int64_t total_batch() const { return total_batch_; }
    std::int64_t rank_batch(int rank) const { return rank_batch_[static_cast<std::size_t>(rank)]; }
    const std::vector<ResidentJob>& resident() const { return resident_; }
    bool empty() const { return resident_.empty(); }
    bool has_room() const { return !max_jobs_ || resident_.size() < *max_jobs_; }
    bool contains(int job_id) const;

    /// Rank with the smallest resident batch, lowest id on ties.
    int least_loaded_rank() const;
    void add(int job_id, std::int64_t batch_size, int rank);
    /// Removes and returns the job. Throws InvariantViolation if absent.
    ResidentJob remove(int job_id);

    /// Job ids per rank, each sorted ascending.
    std::map<int, std::vector<int>> per_rank_assignment() const;
    /// Number of distinct batch sizes on a rank (grouped passes per step).
    std::size_t batch_classes(int rank) const;

    /// Throws InvariantViolation on inconsistent bookkeeping.
    void check() const;

private:
    int rank_count_;
    std::optional<std::size_t> max_jobs_;
    std::vector<ResidentJob> resident_;
    std::vector<std::int64_t> rank_batch_;
    std::int64_t total_batch_ = 0;
};

struct Admission {
    int job_id = 0;
    std::int64_t batch_size = 1;
    int rank = 0;
    friend bool operator==(const Admission&, const Admission&) = default;
};

/// Greedy admission in (batch size desc, job id asc) order without backtracking.
std::vector<Admission> admit(ExecutorState& state, std::span<const PendingJob> pending, const MemoryModel& model);

/// Refill after `exited_batch_size` left: same batch size first, then the largest
/// batch that fits; lowest job id within a size. The exited job must already be
/// removed from `state`.
std::optional<Admission> backfill(ExecutorState& state, std::int64_t exited_batch_size,
                                  std::span<const PendingJob> queue, const MemoryModel& model);

}  // namespace lorasched::intra
