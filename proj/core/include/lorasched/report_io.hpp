// SPDX-License-Identifier: Apache-2.0
//
// File formats: report JSON, Gantt and samples-saved CSV, schedule instances
// and plan CSV, run manifests. Floats are written with 17 significant digits.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "lorasched/early_exit.hpp"
#include "lorasched/inter_sched.hpp"
#include "lorasched/simulator.hpp"

namespace lorasched::io {

/// `{:.17g}`, so every double parses back to itself.
std::string fmt_double(double v);

std::string report_json(const sim::SimReport& r);
std::string gantt_csv(const std::vector<sim::GanttRow>& rows);
/// Columns reason,samples,fraction with fraction of samples_total.
std::string samples_saved_csv(const sim::SimReport& r);
std::string ablation_json(const sim::AblationReport& a);

/// `{"G": int, "tasks": [{"task_id", "duration" (seconds), "gpus"}], "pinned": [...]}`.
inter::SchedInstance parse_schedule_instance(std::string_view json_text);
/// task_id,start,end,gpu_ids with times in seconds and GPU ids separated by ';'.
std::string plan_csv(const inter::SchedulePlan& plan);
inter::SchedulePlan parse_plan_csv(std::string_view text);

/// One line per evaluation of the detector over a trace.
std::string decision_stream_csv(const LossTrajectory& traj, const early_exit::DetectorConfig& cfg,
                                 std::int64_t total_steps);

struct Manifest {
    std::string command;
    std::string config_hash;  // 16 hex digits of FNV-1a over the canonical config
    std::uint64_t seed = 0;
    std::string version;
    std::vector<std::string> outputs;
    std::string started_at;
    std::string finished_at;
};

std::string manifest_json(const Manifest& m);
std::string hash_hex(std::string_view canonical);
std::string utc_timestamp();

/// Writes `contents` to `path`, creating parent directories. InputError on failure.
void write_file(const std::string& path, std::string_view contents);

}  // namespace lorasched::io
