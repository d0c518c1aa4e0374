// SPDX-License-Identifier: Apache-2.0
#include "lorasched/report_io.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <set>

#include <fmt/format.h>

#include "json.hpp"
#include "lorasched/errors.hpp"
#include "lorasched/rng.hpp"

namespace lorasched::io {

using nlohmann::ordered_json;
using nlohmann::json;

std::string fmt_double(double v) { return fmt::format("{:.17g}", v); }

namespace {

// The JSON writer emits the shortest text that parses back to the same double.
json num(double v) {
    if (!std::isfinite(v)) return nullptr;
    return v;
}

json opt_point(const std::optional<LossPoint>& p) {
    if (!p) return nullptr;
    return {{"step", p->step}, {"loss", num(p->loss)}};
}

std::string join_ids(const std::vector<int>& ids) {
    std::string s;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) s += ';';
        s += std::to_string(ids[i]);
    }
    return s;
}

std::vector<int> split_ids(std::string_view s, const std::string& where) {
    std::vector<int> out;
    if (s.empty()) return out;
    std::size_t pos = 0;
    for (;;) {
        const auto semi = s.find(';', pos);
        const auto tok = s.substr(pos, semi == std::string_view::npos ? std::string_view::npos : semi - pos);
        int v = 0;
        const auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        require_input(ec == std::errc{} && p == tok.data() + tok.size(), where + ": bad GPU id list");
        out.push_back(v);
        if (semi == std::string_view::npos) break;
        pos = semi + 1;
    }
    return out;
}

std::vector<std::string_view> split_csv_line(std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t pos = 0;
    for (;;) {
        const auto c = line.find(',', pos);
        cells.push_back(line.substr(pos, c == std::string_view::npos ? std::string_view::npos : c - pos));
        if (c == std::string_view::npos) break;
        pos = c + 1;
    }
    return cells;
}

double parse_double(std::string_view s, const std::string& where) {
    try {
        std::size_t used = 0;
        const std::string str(s);
        const double v = std::stod(str, &used);
        require_input(used == str.size() && std::isfinite(v), "");
        return v;
    } catch (const std::exception&) {
        throw InputError(fmt::format("{}: '{}' is not a finite number", where, s));
    }
}

}  // namespace

std::string report_json(const sim::SimReport& r) {
    json j;
    j["flags"] = {{"batched", r.flags.batched}, {"scheduler", r.flags.scheduler}, {"early_exit", r.flags.early_exit}};
    j["label"] = r.flags.label();
    j["seed"] = r.seed;
    j["makespan"] = num(r.makespan);
    j["samples_total"] = r.samples_total;
    j["samples_trained"] = r.samples_trained;
    json saved;
    for (std::size_t i = 0; i < sim::kSavedReasons.size(); ++i) {
        saved[std::string(sim::to_string(sim::kSavedReasons[i]))] = r.samples_saved_by[i];
    }
    j["samples_saved_by"] = saved;
    j["samples_saved_fraction"] = num(r.saved_fraction());
    j["loss_ratio"] = num(r.loss_ratio);
    j["events_processed"] = r.events_processed;
    j["replans"] = r.replans;
    j["all_plans_optimal"] = r.all_plans_optimal;

    json tasks = json::array();
    for (const auto& t : r.tasks) {
        tasks.push_back({{"task_id", t.task_id},
                         {"gpus", t.gpus},
                         {"gpu_ids", t.gpu_ids},
                         {"arrival", num(t.arrival)},
                         {"start", num(t.start)},
                         {"end", num(t.end)},
                         {"duration_estimate", num(t.duration_estimate)},
                         {"throughput", num(t.throughput)},
                         {"profiling_overhead", num(t.profiling_overhead)},
                         {"memory_profile",
                          {{"b_max", t.b_max},
                           {"k0", num(t.memory_fit.k0)},
                           {"k1", num(t.memory_fit.k1)},
                           {"r_squared", num(t.memory_fit.r_squared)},
                           {"grid_samples", t.profiling_samples},
                           {"peak_budget_fraction", num(t.peak_memory_fraction)}}},
                         {"ground_truth_best_job", t.ground_truth_best},
                         {"best_job", t.best_job ? json(*t.best_job) : json(nullptr)},
                         {"ground_truth_best_completed", t.ground_truth_best_completed},
                         {"best_val_with_early_exit", num(t.best_val_with_ee)},
                         {"best_val_without_early_exit", num(t.best_val_without_ee)},
                         {"loss_ratio", num(t.loss_ratio)},
                         {"samples_total", t.samples_total},
                         {"samples_trained", t.samples_trained}});
    }
    j["tasks"] = tasks;

    json jobs = json::array();
    for (const auto& o : r.jobs) {
        jobs.push_back({{"task_id", o.task_id},
                        {"job_id", o.job_id},
                        {"learning_rate", num(o.params.learning_rate)},
                        {"rank", o.params.lora_rank},
                        {"batch_size", o.params.per_adapter_batch_size},
                        {"planted_kind", std::string(to_string(o.planted_kind))},
                        {"status", std::string(to_string(o.status))},
                        {"best_val", opt_point(o.best_val)},
                        {"checkpoint_step", o.checkpoint_step ? json(*o.checkpoint_step) : json(nullptr)},
                        {"steps_trained", o.steps_trained},
                        {"exit_step", o.exit_step ? json(*o.exit_step) : json(nullptr)},
                        {"exit_time", o.exit_time ? num(*o.exit_time) : json(nullptr)},
                        {"samples_scheduled", o.samples_scheduled},
                        {"samples_trained", o.samples_trained},
                        {"samples_saved", o.samples_saved}});
    }
    j["jobs"] = jobs;

    json gantt = json::array();
    for (const auto& g : sim::emit_gantt(r)) {
        gantt.push_back({{"task_id", g.task_id}, {"gpu_ids", g.gpu_ids}, {"start", num(g.start)}, {"end", num(g.end)}});
    }
    j["gantt"] = gantt;
    return j.dump(2) + "\n";
}

std::string gantt_csv(const std::vector<sim::GanttRow>& rows) {
    std::string s = "task_id,start,end,gpu_ids\n";
    for (const auto& r : rows) {
        s += fmt::format("{},{},{},{}\n", r.task_id, fmt_double(r.start), fmt_double(r.end), join_ids(r.gpu_ids));
    }
    return s;
}

std::string samples_saved_csv(const sim::SimReport& r) {
    std::string s = "reason,samples,fraction\n";
    const double total = static_cast<double>(r.samples_total);
    for (std::size_t i = 0; i < sim::kSavedReasons.size(); ++i) {
        const auto v = r.samples_saved_by[i];
        s += fmt::format("{},{},{}\n", sim::to_string(sim::kSavedReasons[i]), v,
                         fmt_double(total > 0 ? static_cast<double>(v) / total : 0.0));
    }
    s += fmt::format("total,{},{}\n", r.samples_saved(), fmt_double(r.saved_fraction()));
    return s;
}

std::string ablation_json(const sim::AblationReport& a) {
    json j;
    j["makespan"] = {{"b", num(a.b.makespan)},
                     {"b_s", num(a.b_s.makespan)},
                     {"b_ee", num(a.b_ee.makespan)},
                     {"b_s_ee", num(a.b_s_ee.makespan)}};
    j["ratios"] = {{"b_over_b_s", num(a.ratio_b_over_b_s())},
                   {"b_over_b_ee", num(a.ratio_b_over_b_ee())},
                   {"b_over_b_s_ee", num(a.ratio_b_over_b_s_ee())},
                   {"b_ee_over_b_s_ee", num(a.ratio_b_ee_over_b_s_ee())}};
    j["checks"] = {{"ee_chain_monotone", a.ee_chain_monotone()},
                   {"scheduler_helps", a.scheduler_helps()},
                   {"ee_never_hurts", a.ee_never_hurts()}};
    j["seed"] = a.b.seed;
    return j.dump(2) + "\n";
}

inter::SchedInstance parse_schedule_instance(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw InputError(fmt::format("schedule instance is not valid JSON: {}", e.what()));
    }
    require_input(j.is_object(), "schedule instance must be a JSON object");
    for (const auto& [k, v] : j.items()) {
        require_input(k == "G" || k == "tasks" || k == "pinned", fmt::format("unknown key '{}' in schedule instance", k));
    }
    inter::SchedInstance inst;
    try {
        require_input(j.contains("G"), "schedule instance: missing 'G'");
        inst.G = j.at("G").get<int>();
        if (j.contains("tasks")) {
            for (const auto& t : j.at("tasks")) {
                for (const auto& [k, v] : t.items()) {
                    require_input(k == "task_id" || k == "duration" || k == "gpus",
                                  fmt::format("unknown key '{}' in schedule task", k));
                }
                inst.tasks.push_back({t.at("task_id").get<int>(), inter::to_micros(t.at("duration").get<double>()),
                                      t.at("gpus").get<int>()});
            }
        }
        if (j.contains("pinned")) {
            for (const auto& p : j.at("pinned")) {
                inst.pinned.push_back({p.at("task_id").get<int>(), p.at("gpu_ids").get<std::vector<int>>(),
                                       inter::to_micros(p.at("remaining").get<double>())});
            }
        }
    } catch (const json::exception& e) {
        throw InputError(fmt::format("schedule instance: {}", e.what()));
    }
    inst.validate();
    return inst;
}

std::string plan_csv(const inter::SchedulePlan& plan) {
    std::string s = "task_id,start,end,gpu_ids\n";
    for (const auto& a : plan.assignments) {
        s += fmt::format("{},{},{},{}\n", a.task_id, fmt_double(inter::to_seconds(a.start)),
                         fmt_double(inter::to_seconds(a.end)), join_ids(a.gpu_ids));
    }
    return s;
}

inter::SchedulePlan parse_plan_csv(std::string_view text) {
    inter::SchedulePlan plan;
    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() : nl + 1;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        ++line_no;
        if (line_no == 1) {
            require_input(line == "task_id,start,end,gpu_ids", "plan CSV: unexpected header");
            continue;
        }
        if (line.empty()) continue;
        const auto where = fmt::format("plan CSV line {}", line_no);
        const auto cells = split_csv_line(line);
        require_input(cells.size() == 4, where + ": expected 4 columns");
        inter::Assignment a;
        a.task_id = static_cast<int>(parse_double(cells[0], where));
        a.start = inter::to_micros(parse_double(cells[1], where));
        a.end = inter::to_micros(parse_double(cells[2], where));
        a.gpu_ids = split_ids(cells[3], where);
        plan.makespan = std::max(plan.makespan, a.end);
        plan.assignments.push_back(std::move(a));
    }
    return plan;
}

std::string decision_stream_csv(const LossTrajectory& traj, const early_exit::DetectorConfig& cfg,
                                std::int64_t total_steps) {
    cfg.validate();
    std::string s = "step,ema_train,val,slope_train,slope_val,gap,cnt_div,cnt_ovf,decision,checkpoint_step\n";
    const auto boundary =
        static_cast<std::int64_t>(std::ceil(cfg.warmup_ratio * static_cast<double>(total_steps) - 1e-9));
    early_exit::DetectorState state;
    auto opt = [](const std::optional<double>& v) { return v ? fmt_double(*v) : std::string(); };
    std::size_t ti = 0;
    for (const auto& vp : traj.val) {
        while (ti < traj.train_ema.size() && traj.train_ema[ti].step < vp.step) ++ti;
        require_input(ti < traj.train_ema.size() && traj.train_ema[ti].step == vp.step,
                      fmt::format("validation at step {} has no training loss at the same step", vp.step));
        const auto& ema = traj.train_ema[ti];
        const auto obs = early_exit::observe(state, cfg, ema, vp, vp.step > boundary);
        std::string decision = "continue";
        if (obs.decision.exit) decision = fmt::format("exit_{}", early_exit::to_string(*obs.decision.reason));
        s += fmt::format("{},{},{},{},{},{},{},{},{},{}\n", vp.step, fmt_double(ema.loss), fmt_double(vp.loss),
                         opt(obs.slope_train), opt(obs.slope_val), obs.gap_undefined ? "undefined" : opt(obs.gap),
                         obs.cnt_div, obs.cnt_ovf, decision,
                         obs.decision.checkpoint_step ? std::to_string(*obs.decision.checkpoint_step) : "");
        if (obs.decision.exit) break;
    }
    return s;
}

std::string manifest_json(const Manifest& m) {
    ordered_json j;
    j["command"] = m.command;
    j["config_hash"] = m.config_hash;
    j["seed"] = m.seed;
    j["version"] = m.version;
    j["outputs"] = m.outputs;
    j["started_at"] = m.started_at;
    j["finished_at"] = m.finished_at;
    return j.dump(2) + "\n";
}

std::string hash_hex(std::string_view canonical) { return fmt::format("{:016x}", fnv1a64(canonical)); }

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_file(const std::string& path, std::string_view contents) {
    const std::filesystem::path p(path);
    std::error_code ec;
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path(), ec);
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    require_input(static_cast<bool>(out), fmt::format("cannot write file '{}'", path));
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    require_input(static_cast<bool>(out), fmt::format("failed writing '{}'", path));
}

}  // namespace lorasched::io
