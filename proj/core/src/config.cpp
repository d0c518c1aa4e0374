// SPDX-License-Identifier: Apache-2.0
#include "lorasched/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "json.hpp"
#include "lorasched/errors.hpp"

namespace lorasched::sim {

using nlohmann::json;

void MemoryConfig::validate() const {
    require_input(std::isfinite(k0) && k0 >= 0.0, "memory.k0 must be >= 0");
    require_input(std::isfinite(k1) && k1 >= 0.0, "memory.k1 must be >= 0");
    require_input(std::isfinite(capacity) && capacity > 0.0, "memory.capacity must be > 0");
    require_input(safety_margin > 0.0 && safety_margin <= 1.0, "memory.safety_margin must be in (0, 1]");
    require_input(seq_len >= 1, "memory.seq_len must be >= 1");
    require_input(std::isfinite(noise) && noise >= 0.0 && noise < 0.5, "memory.noise must be in [0, 0.5)");
}

void CostModel::validate() const {
    for (double v : {t_base, t_token, t_pass, t_sync}) {
        require_input(std::isfinite(v) && v >= 0.0, "cost_model coefficients must be finite and >= 0");
    }
    for (double m : {mult_sequential, mult_batched, mult_adapter_parallel}) {
        require_input(std::isfinite(m) && m > 0.0, "cost_model multipliers must be > 0");
    }
    require_input(seq_len >= 1, "cost_model.seq_len must be >= 1");
    require_input(t_base + t_token + t_pass > 0.0, "cost_model must give a positive step time");
}

void ClusterConfig::validate() const {
    require_input(gpus >= 1, "cluster.gpus must be >= 1");
    memory.validate();
    cost.validate();
}

void WorkloadSpec::validate() const {
    detector.validate();
    require_input(eval_interval >= 1, "eval_interval must be >= 1");
    require_input(profiling_steps >= 0, "profiling_steps must be >= 0");
    require_input(!tasks.empty(), "workload has no tasks");
    std::set<int> ids;
    for (const auto& t : tasks) {
        const auto where = fmt::format("task {}", t.task_id);
        require_input(ids.insert(t.task_id).second, fmt::format("duplicate task_id {}", t.task_id));
        require_input(t.gpu_requirement >= 1, where + ": gpu_requirement must be >= 1");
        require_input(std::isfinite(t.arrival_time) && t.arrival_time >= 0.0, where + ": arrival_time must be >= 0");
        require_input(t.total_steps >= 1, where + ": total_steps must be >= 1");
        require_input(std::isfinite(t.cost_scale) && t.cost_scale > 0.0, where + ": cost_scale must be > 0");
        t.mix.validate();
        for (const auto& [id, p] : t.job_profiles) {
            require_input(id >= 0 && static_cast<std::size_t>(id) < t.grid.size(),
                          fmt::format("{}: profile override for unknown job {}", where, id));
            p.validate(t.total_steps);
        }
        if (t.memory) t.memory->validate();
    }
}

namespace {

void check_keys(const json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
    require_input(j.is_object(), fmt::format("{} must be a JSON object", where));
    for (const auto& [k, v] : j.items()) {
        bool ok = false;
        for (auto a : allowed) ok = ok || k == a;
        require_input(ok, fmt::format("unknown key '{}' in {}", k, where));
    }
}

template <typename T>
void get_opt(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw InputError(fmt::format("{}.{}: {}", where, key, e.what()));
    }
}

template <typename T>
T get_req(const json& j, const char* key, const std::string& where) {
    require_input(j.contains(key), fmt::format("{}: missing required key '{}'", where, key));
    T out{};
    get_opt(j, key, out, where);
    return out;
}

MemoryConfig parse_memory(const json& j, MemoryConfig m, const std::string& where) {
    check_keys(j, {"k0", "k1", "capacity", "safety_margin", "seq_len", "noise"}, where);
    get_opt(j, "k0", m.k0, where);
    get_opt(j, "k1", m.k1, where);
    get_opt(j, "capacity", m.capacity, where);
    get_opt(j, "safety_margin", m.safety_margin, where);
    get_opt(j, "seq_len", m.seq_len, where);
    get_opt(j, "noise", m.noise, where);
    return m;
}

json memory_to_json(const MemoryConfig& m) {
    return {{"k0", m.k0},           {"k1", m.k1},           {"capacity", m.capacity},
            {"safety_margin", m.safety_margin}, {"seq_len", m.seq_len}, {"noise", m.noise}};
}

CurveProfile parse_profile(const json& j, const std::string& where) {
    check_keys(j, {"kind", "base_level", "decay_rate", "break_step", "post_break_slope", "noise_sigma", "floor", "val_gap"},
               where);
    CurveProfile p;
    p.kind = curve_kind_from_string(get_req<std::string>(j, "kind", where));
    get_opt(j, "base_level", p.base_level, where);
    get_opt(j, "decay_rate", p.decay_rate, where);
    get_opt(j, "break_step", p.break_step, where);
    get_opt(j, "post_break_slope", p.post_break_slope, where);
    get_opt(j, "noise_sigma", p.noise_sigma, where);
    get_opt(j, "floor", p.floor, where);
    get_opt(j, "val_gap", p.val_gap, where);
    return p;
}

json profile_to_json(const CurveProfile& p) {
    return {{"kind", std::string(to_string(p.kind))},
            {"base_level", p.base_level},
            {"decay_rate", p.decay_rate},
            {"break_step", p.break_step},
            {"post_break_slope", p.post_break_slope},
            {"noise_sigma", p.noise_sigma},
            {"floor", p.floor},
            {"val_gap", p.val_gap}};
}

void parse_mix(const json& j, TaskSpec& t, const std::string& where) {
    check_keys(j,
               {"diverging", "overfitting", "underperforming", "noise_sigma", "val_gap", "base_offset", "decay_lo",
                "decay_hi", "floor_lo", "floor_hi", "best_floor", "underperform_floor_lo", "underperform_floor_hi",
                "break_lo", "break_hi", "diverge_slope", "overfit_slope", "jobs"},
               where);
    auto& m = t.mix;
    get_opt(j, "diverging", m.diverging, where);
    get_opt(j, "overfitting", m.overfitting, where);
    get_opt(j, "underperforming", m.underperforming, where);
    get_opt(j, "noise_sigma", m.noise_sigma, where);
    get_opt(j, "val_gap", m.val_gap, where);
    get_opt(j, "base_offset", m.base_offset, where);
    get_opt(j, "decay_lo", m.decay_lo, where);
    get_opt(j, "decay_hi", m.decay_hi, where);
    get_opt(j, "floor_lo", m.floor_lo, where);
    get_opt(j, "floor_hi", m.floor_hi, where);
    get_opt(j, "best_floor", m.best_floor, where);
    get_opt(j, "underperform_floor_lo", m.underperform_floor_lo, where);
    get_opt(j, "underperform_floor_hi", m.underperform_floor_hi, where);
    get_opt(j, "break_lo", m.break_lo, where);
    get_opt(j, "break_hi", m.break_hi, where);
    get_opt(j, "diverge_slope", m.diverge_slope, where);
    get_opt(j, "overfit_slope", m.overfit_slope, where);
    if (j.contains("jobs")) {
        const auto& jobs = j.at("jobs");
        require_input(jobs.is_object(), where + ".jobs must be an object keyed by job id");
        for (const auto& [k, v] : jobs.items()) {
            int id = 0;
            try {
                std::size_t pos = 0;
                id = std::stoi(k, &pos);
                require_input(pos == k.size(), "");
            } catch (const std::exception&) {
                throw InputError(fmt::format("{}.jobs: key '{}' is not a job id", where, k));
            }
            t.job_profiles[id] = parse_profile(v, fmt::format("{}.jobs.{}", where, k));
        }
    }
}

json mix_to_json(const TaskSpec& t) {
    const auto& m = t.mix;
    json j = {{"diverging", m.diverging},
              {"overfitting", m.overfitting},
              {"underperforming", m.underperforming},
              {"noise_sigma", m.noise_sigma},
              {"val_gap", m.val_gap},
              {"base_offset", m.base_offset},
              {"decay_lo", m.decay_lo},
              {"decay_hi", m.decay_hi},
              {"floor_lo", m.floor_lo},
              {"floor_hi", m.floor_hi},
              {"best_floor", m.best_floor},
              {"underperform_floor_lo", m.underperform_floor_lo},
              {"underperform_floor_hi", m.underperform_floor_hi},
              {"break_lo", m.break_lo},
              {"break_hi", m.break_hi},
              {"diverge_slope", m.diverge_slope},
              {"overfit_slope", m.overfit_slope}};
    json jobs = json::object();
    for (const auto& [id, p] : t.job_profiles) jobs[std::to_string(id)] = profile_to_json(p);
    j["jobs"] = jobs;
    return j;
}

TaskSpec parse_task(const json& j, std::size_t index) {
    const auto where = fmt::format("tasks[{}]", index);
    check_keys(j,
               {"task_id", "gpu_requirement", "total_samples", "arrival_time", "search_space", "total_steps",
                "profile_overrides", "memory", "cost_scale"},
               where);
    TaskSpec t;
    t.task_id = get_req<int>(j, "task_id", where);
    t.gpu_requirement = get_req<int>(j, "gpu_requirement", where);
    if (j.contains("total_samples")) t.total_samples = get_req<std::int64_t>(j, "total_samples", where);
    get_opt(j, "arrival_time", t.arrival_time, where);
    t.total_steps = get_req<std::int64_t>(j, "total_steps", where);
    get_opt(j, "cost_scale", t.cost_scale, where);

    require_input(j.contains("search_space"), where + ": missing required key 'search_space'");
    const auto& ss = j.at("search_space");
    const auto ssw = where + ".search_space";
    check_keys(ss, {"lr", "rank", "batch_size"}, ssw);
    t.grid.learning_rates = get_req<std::vector<double>>(ss, "lr", ssw);
    t.grid.ranks = get_req<std::vector<int>>(ss, "rank", ssw);
    t.grid.batch_sizes = get_req<std::vector<int>>(ss, "batch_size", ssw);

    if (j.contains("profile_overrides")) parse_mix(j.at("profile_overrides"), t, where + ".profile_overrides");
    if (j.contains("memory")) t.memory = parse_memory(j.at("memory"), MemoryConfig{}, where + ".memory");
    return t;
}

json parse_document(std::string_view text, const char* what) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw InputError(fmt::format("{} is not valid JSON: {}", what, e.what()));
    }
}

}  // namespace

WorkloadSpec parse_workload_json(std::string_view text) {
    const json j = parse_document(text, "workload");
    check_keys(j, {"tasks", "early_exit", "eval_interval", "profiling_steps"}, "workload");
    WorkloadSpec w;
    require_input(j.contains("tasks") && j.at("tasks").is_array(), "workload: 'tasks' must be an array");
    std::size_t i = 0;
    for (const auto& t : j.at("tasks")) w.tasks.push_back(parse_task(t, i++));
    get_opt(j, "eval_interval", w.eval_interval, "workload");
    get_opt(j, "profiling_steps", w.profiling_steps, "workload");
    if (j.contains("early_exit")) {
        const auto& e = j.at("early_exit");
        const std::string where = "early_exit";
        check_keys(e,
                   {"alpha", "window", "tau_slope", "tau_gap", "patience_div", "patience_ovf", "warmup_ratio",
                    "warmup_select_ratio"},
                   where);
        auto& d = w.detector;
        get_opt(e, "alpha", d.alpha, where);
        get_opt(e, "window", d.window, where);
        get_opt(e, "tau_slope", d.tau_slope, where);
        get_opt(e, "tau_gap", d.tau_gap, where);
        get_opt(e, "patience_div", d.patience_div, where);
        get_opt(e, "patience_ovf", d.patience_ovf, where);
        get_opt(e, "warmup_ratio", d.warmup_ratio, where);
        get_opt(e, "warmup_select_ratio", d.warmup_select_ratio, where);
    }
    w.validate();
    return w;
}

ClusterConfig parse_cluster_json(std::string_view text) {
    const json j = parse_document(text, "cluster");
    check_keys(j, {"gpus", "memory", "cost_model"}, "cluster");
    ClusterConfig c;
    c.gpus = get_req<int>(j, "gpus", "cluster");
    if (j.contains("memory")) c.memory = parse_memory(j.at("memory"), c.memory, "cluster.memory");
    if (j.contains("cost_model")) {
        const auto& m = j.at("cost_model");
        const std::string where = "cluster.cost_model";
        check_keys(m,
                   {"t_base", "t_token", "t_pass", "t_sync", "seq_len", "mult_sequential", "mult_batched",
                    "mult_adapter_parallel"},
                   where);
        get_opt(m, "t_base", c.cost.t_base, where);
        get_opt(m, "t_token", c.cost.t_token, where);
        get_opt(m, "t_pass", c.cost.t_pass, where);
        get_opt(m, "t_sync", c.cost.t_sync, where);
        get_opt(m, "seq_len", c.cost.seq_len, where);
        get_opt(m, "mult_sequential", c.cost.mult_sequential, where);
        get_opt(m, "mult_batched", c.cost.mult_batched, where);
        get_opt(m, "mult_adapter_parallel", c.cost.mult_adapter_parallel, where);
    }
    c.validate();
    return c;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require_input(static_cast<bool>(in), fmt::format("cannot read file '{}'", path));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

WorkloadSpec load_workload(const std::string& path) {
    const auto text = read_file(path);
    try {
        return parse_workload_json(text);
    } catch (const InputError& e) {
        throw InputError(fmt::format("{}: {}", path, e.what()));
    }
}

ClusterConfig load_cluster(const std::string& path) {
    const auto text = read_file(path);
    try {
        return parse_cluster_json(text);
    } catch (const InputError& e) {
        throw InputError(fmt::format("{}: {}", path, e.what()));
    }
}

std::string canonical_json(const WorkloadSpec& w) {
    json tasks = json::array();
    for (const auto& t : w.tasks) {
        json jt = {{"task_id", t.task_id},
                   {"gpu_requirement", t.gpu_requirement},
                   {"arrival_time", t.arrival_time},
                   {"total_steps", t.total_steps},
                   {"cost_scale", t.cost_scale},
                   {"search_space",
                    {{"lr", t.grid.learning_rates}, {"rank", t.grid.ranks}, {"batch_size", t.grid.batch_sizes}}},
                   {"profile_overrides", mix_to_json(t)}};
        if (t.total_samples) jt["total_samples"] = *t.total_samples;
        if (t.memory) jt["memory"] = memory_to_json(*t.memory);
        tasks.push_back(std::move(jt));
    }
    const auto& d = w.detector;
    json j = {{"tasks", tasks},
              {"eval_interval", w.eval_interval},
              {"profiling_steps", w.profiling_steps},
              {"early_exit",
               {{"alpha", d.alpha},
                {"window", d.window},
                {"tau_slope", d.tau_slope},
                {"tau_gap", d.tau_gap},
                {"patience_div", d.patience_div},
                {"patience_ovf", d.patience_ovf},
                {"warmup_ratio", d.warmup_ratio},
                {"warmup_select_ratio", d.warmup_select_ratio}}}};
    return j.dump();
}

std::string canonical_json(const ClusterConfig& c) {
    json j = {{"gpus", c.gpus},
              {"memory", memory_to_json(c.memory)},
              {"cost_model",
               {{"t_base", c.cost.t_base},
                {"t_token", c.cost.t_token},
                {"t_pass", c.cost.t_pass},
                {"t_sync", c.cost.t_sync},
                {"seq_len", c.cost.seq_len},
                {"mult_sequential", c.cost.mult_sequential},
                {"mult_batched", c.cost.mult_batched},
                {"mult_adapter_parallel", c.cost.mult_adapter_parallel}}}};
    return j.dump();
}

}  // namespace lorasched::sim
