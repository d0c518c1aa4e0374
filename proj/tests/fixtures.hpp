// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>

#include "lorasched/config.hpp"
#include "lorasched/rng.hpp"

namespace lorasched::test {

inline sim::TaskSpec small_task(int id, int gpus, std::size_t lrs, std::int64_t steps = 100) {
    sim::TaskSpec t;
    t.task_id = id;
    t.gpu_requirement = gpus;
    for (std::size_t i = 0; i < lrs; ++i) t.grid.learning_rates.push_back(1e-5 * static_cast<double>(i + 1));
    t.grid.ranks = {16};
    t.grid.batch_sizes = {4};
    t.total_steps = steps;
    return t;
}

inline sim::ClusterConfig cluster(int gpus) {
    sim::ClusterConfig c;
    c.gpus = gpus;
    return c;
}

/// Fresh scratch directory under the system temp dir.
inline std::string scratch_dir(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("lorasched_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p.string();
}

}  // namespace lorasched::test
