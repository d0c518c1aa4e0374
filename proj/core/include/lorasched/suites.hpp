// SPDX-License-Identifier: Apache-2.0
//
// Seeded synthetic workloads used by the acceptance suite, the benchmarks and
// `lorasched simulate --suite`.
#pragma once

#include <cstdint>

#include "lorasched/config.hpp"

namespace lorasched::sim {

/// One task, 165 configurations (11 learning rates x ranks {16,32,64} x batch
/// sizes {1,2,4,8,16}), with `redundancy` of the jobs planted as diverging,
/// overfitting or underperforming in proportions 1:1:1.
WorkloadSpec early_exit_workload(double redundancy = 0.75, std::int64_t total_steps = 500);
ClusterConfig single_gpu_cluster();

/// Eleven tasks on eight GPUs: two 4-GPU, three 2-GPU and six 1-GPU tasks in a
/// seeded order. 1-GPU tasks search 60 configurations, multi-GPU tasks 64.
/// Each task's redundancy is drawn from [0.72, 0.83].
WorkloadSpec cluster_workload(std::uint64_t seed);
ClusterConfig eight_gpu_cluster();

}  // namespace lorasched::sim
