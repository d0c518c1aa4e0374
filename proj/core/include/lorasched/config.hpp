// SPDX-License-Identifier: Apache-2.0
//
// Workload and cluster descriptions, loaded from JSON. Schemas are documented
// in docs/schemas.md.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "lorasched/early_exit.hpp"
#include "lorasched/workload.hpp"

namespace lorasched::sim {

struct MemoryConfig {
    double k0 = 20e9;  // bytes
    double k1 = 1.5e6;  // bytes per token
    double capacity = 80e9;
    double safety_margin = 0.9;
    std::int64_t seq_len = 512;
    /// Relative std-dev of multiplicative noise on profiling measurements.
    double noise = 0.0;

    void validate() const;
};

/// step = scale * mult * (t_base + t_token * L * B_rank + t_pass * classes_rank) + t_sync [ranks > 1]
/// where B_rank and classes_rank are taken on the busiest rank.
struct CostModel {
    double t_base = 0.05;
    double t_token = 2e-5;
    double t_pass = 0.01;
    double t_sync = 0.01;
    std::int64_t seq_len = 512;
    double mult_sequential = 1.0;
    double mult_batched = 1.0;
    double mult_adapter_parallel = 1.0;

    void validate() const;
};

struct ClusterConfig {
    int gpus = 8;
    MemoryConfig memory;
    CostModel cost;

    void validate() const;
};

struct TaskSpec {
    int task_id = 0;
    int gpu_requirement = 1;
    std::optional<std::int64_t> total_samples;
    double arrival_time = 0.0;
    SearchGrid grid;
    std::int64_t total_steps = 100;
    ProfileMix mix;
    /// Per-job replacement of the planted profile, keyed by job id.
    std::map<int, CurveProfile> job_profiles;
    std::optional<MemoryConfig> memory;
    double cost_scale = 1.0;
};

struct WorkloadSpec {
    std::vector<TaskSpec> tasks;
    early_exit::DetectorConfig detector;
    std::int64_t eval_interval = 10;
    int profiling_steps = 20;

    void validate() const;
};

WorkloadSpec parse_workload_json(std::string_view text);
ClusterConfig parse_cluster_json(std::string_view text);

/// Reads a file into a string; InputError naming the path when unreadable.
std::string read_file(const std::string& path);

WorkloadSpec load_workload(const std::string& path);
ClusterConfig load_cluster(const std::string& path);

/// Compact JSON with sorted keys and shortest round-trip numbers; equal configs
/// give equal strings on every platform.
std::string canonical_json(const WorkloadSpec& w);
std::string canonical_json(const ClusterConfig& c);

}  // namespace lorasched::sim
