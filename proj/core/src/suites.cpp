// SPDX-License-Identifier: Apache-2.0
#include "lorasched/suites.hpp"

#include <utility>
#include <vector>

#include "lorasched/errors.hpp"
#include "lorasched/rng.hpp"

namespace lorasched::sim {

WorkloadSpec early_exit_workload(double redundancy, std::int64_t total_steps) {
    require_input(redundancy >= 0.0 && redundancy < 1.0, "redundancy must be in [0, 1)");
    TaskSpec t;
    t.task_id = 0;
    t.gpu_requirement = 1;
    t.total_steps = total_steps;
    t.grid.learning_rates = {1e-5, 2e-5, 5e-5, 1e-4, 2e-4, 3e-4, 5e-4, 1e-3, 2e-3, 3e-3, 5e-3};
    t.grid.ranks = {16, 32, 64};
    t.grid.batch_sizes = {1, 2, 4, 8, 16};
    t.mix.diverging = redundancy / 3.0;
    t.mix.overfitting = redundancy / 3.0;
    t.mix.underperforming = redundancy / 3.0;
    WorkloadSpec w;
    w.tasks.push_back(std::move(t));
    return w;
}

ClusterConfig single_gpu_cluster() {
    ClusterConfig c;
    c.gpus = 1;
    return c;
}

WorkloadSpec cluster_workload(std::uint64_t seed) {
    Rng rng(derive_seed(seed, "cluster_workload"));
    std::vector<int> gpus = {4, 4, 2, 2, 2, 1, 1, 1, 1, 1, 1};
    for (std::size_t i = gpus.size() - 1; i > 0; --i) {
        const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)));
        std::swap(gpus[i], gpus[j]);
    }
    WorkloadSpec w;
    for (std::size_t i = 0; i < gpus.size(); ++i) {
        TaskSpec t;
        t.task_id = static_cast<int>(i);
        t.gpu_requirement = gpus[i];
        t.total_steps = 10 * rng.uniform_int(20, 60);
        if (gpus[i] == 1) {
            t.grid.learning_rates = {1e-5, 5e-5, 1e-4, 2e-4, 5e-4};
            t.grid.ranks = {16, 32, 64};
        } else {
            t.grid.learning_rates = {1e-5, 5e-5, 1e-4, 5e-4};
            t.grid.ranks = {8, 16, 32, 64};
        }
        t.grid.batch_sizes = {1, 2, 4, 8};
        // Larger backbones step slower even when sharded.
        t.cost_scale = gpus[i] == 4 ? 2.0 : (gpus[i] == 2 ? 1.5 : 1.0);
        const double redundancy = rng.uniform(0.72, 0.83);
        t.mix.diverging = 0.3 * redundancy;
        t.mix.overfitting = 0.3 * redundancy;
        t.mix.underperforming = 0.4 * redundancy;
        w.tasks.push_back(std::move(t));
    }
    return w;
}

ClusterConfig eight_gpu_cluster() {
    ClusterConfig c;
    c.gpus = 8;
    return c;
}

}  // namespace lorasched::sim
