// SPDX-License-Identifier: Apache-2.0
#include "lorasched/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <queue>
#include <set>

#include <fmt/format.h>

#include "lorasched/early_exit.hpp"
#include "lorasched/errors.hpp"
#include "lorasched/rng.hpp"

namespace lorasched::sim {

std::string PolicyFlags::label() const {
    std::string s = batched ? "b" : "seq";
    if (scheduler) s += "_s";
    if (early_exit) s += "_ee";
    return s;
}

PolicyFlags PolicyFlags::parse(std::string_view text) {
    PolicyFlags f{false, false, false};
    std::size_t pos = 0;
    while (pos <= text.size() && !text.empty()) {
        const auto comma = text.find(',', pos);
        auto tok = text.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
        while (!tok.empty() && tok.front() == ' ') tok.remove_prefix(1);
        while (!tok.empty() && tok.back() == ' ') tok.remove_suffix(1);
        if (tok == "b") {
            f.batched = true;
        } else if (tok == "s") {
            f.scheduler = true;
        } else if (tok == "ee") {
            f.early_exit = true;
        } else {
            throw InputError(fmt::format("unknown policy flag '{}' (expected b, s, ee)", tok));
        }
        if (comma == std::string_view::npos) break;
        pos = comma + 1;
    }
    return f;
}

std::string_view to_string(SavedReason r) {
    switch (r) {
        case SavedReason::Diverging: return "diverging";
        case SavedReason::Overfitting: return "overfitting";
        case SavedReason::Underperforming: return "underperforming";
    }
    return "unknown";
}

std::int64_t SimReport::samples_saved() const {
    return std::accumulate(samples_saved_by.begin(), samples_saved_by.end(), std::int64_t{0});
}

double SimReport::saved_fraction() const {
    return samples_total > 0 ? static_cast<double>(samples_saved()) / static_cast<double>(samples_total) : 0.0;
}

double step_time(const CostModel& cost, const intra::ExecutorState& exec, bool batched, double cost_scale) {
    std::int64_t rank_batch = 0;
    std::size_t classes = 0;
    for (int r = 0; r < exec.rank_count(); ++r) {
        rank_batch = std::max(rank_batch, exec.rank_batch(r));
        classes = std::max(classes, exec.batch_classes(r));
    }
    const double mult = !batched ? cost.mult_sequential
                                 : (exec.rank_count() > 1 ? cost.mult_adapter_parallel : cost.mult_batched);
    double t = cost.t_base + cost.t_token * static_cast<double>(cost.seq_len * rank_batch) +
               cost.t_pass * static_cast<double>(classes);
    t *= cost_scale * mult;
    if (exec.rank_count() > 1) t += cost.t_sync;
    return t;
}

namespace {

enum class EventKind { TaskComplete = 0, JobExit = 1, EvalPoint = 2, StepBatchComplete = 3, Arrival = 4, Replan = 5 };

enum class ExitKind { Diverging, Overfitting, Completed, Park };

struct Event {
    double time = 0.0;
    EventKind kind = EventKind::Replan;
    int task = -1;  // index into tasks, -1 for cluster-wide events
    int job = -1;   // index into the task's jobs
    std::uint64_t seq = 0;
    ExitKind exit = ExitKind::Completed;
    std::optional<std::int64_t> checkpoint;
    inter::ReplanTrigger trigger = inter::ReplanTrigger::TaskArrival;
};

struct EventLater {
    // Min-heap on (time, kind, task, job, seq). Task and job indices follow id order.
    bool operator()(const Event& a, const Event& b) const {
        if (a.time != b.time) return a.time > b.time;
        if (a.kind != b.kind) return a.kind > b.kind;
        if (a.task != b.task) return a.task > b.task;
        if (a.job != b.job) return a.job > b.job;
        return a.seq > b.seq;
    }
};

struct JobRt {
    JobRt(Job j, CurveProfile p, const early_exit::DetectorConfig& cfg)
        : job(std::move(j)), profile(p), detector(cfg) {}

    Job job;
    CurveProfile profile;
    LossTrajectory traj;
    early_exit::Detector detector;
    std::int64_t steps_done = 0;
    std::size_t val_cursor = 0;
    std::optional<std::int64_t> exit_step;
    std::optional<double> exit_time;
    std::optional<std::int64_t> checkpoint;
    std::int64_t saved = 0;
};

enum class Phase { NotArrived, Queued, Running, Done };

struct TaskRt {
    const TaskSpec* spec = nullptr;
    std::vector<JobRt> jobs;
    MemoryConfig mem_cfg;
    intra::MemoryModel model;
    intra::ExecutorState exec;
    std::set<int> pending;  // job indices
    std::vector<int> parked;
    Phase phase = Phase::NotArrived;
    std::vector<int> gpu_ids;
    double start = 0.0;
    double end = 0.0;
    double ready_at = 0.0;  // profiling finishes
    bool stepping = false;
    double throughput = 0.0;
    double duration_estimate = 0.0;
    double overhead = 0.0;
    std::int64_t warmup_boundary = 0;
    std::int64_t total_samples = 0;
    TaskOutcome out;
    double peak_memory = 0.0;
};

intra::PendingJob pending_of(const TaskRt& t, int j) {
    return {j, t.jobs[static_cast<std::size_t>(j)].job.params.per_adapter_batch_size};
}

class Simulation {
public:
    Simulation(const WorkloadSpec& w, const ClusterConfig& c, PolicyFlags f, std::uint64_t seed)
        : w_(w), c_(c), flags_(f), seed_(seed) {
        w_.validate();
        c_.validate();
        setup();
    }

    SimReport run() {
        for (std::size_t i = 0; i < tasks_.size(); ++i) {
            Event e;
            e.time = tasks_[i].spec->arrival_time;
            e.kind = EventKind::Arrival;
            e.task = static_cast<int>(i);
            push(e);
        }
        while (!queue_.empty()) {
            const Event e = queue_.top();
            queue_.pop();
            check_invariant(e.time >= now_, "event queue went backwards in time");
            now_ = e.time;
            ++events_;
            dispatch(e);
            if (queue_.empty() || queue_.top().time > now_ || queue_.top().kind >= EventKind::Arrival) flush_launches();
        }
        for (const auto& t : tasks_) {
            check_invariant(t.phase == Phase::Done, fmt::format("task {} never completed", t.spec->task_id));
        }
        return build_report();
    }

private:
    // ---- setup ------------------------------------------------------------

    void setup() {
        std::vector<const TaskSpec*> order;
        for (const auto& t : w_.tasks) order.push_back(&t);
        std::sort(order.begin(), order.end(), [](auto a, auto b) { return a->task_id < b->task_id; });
        for (const auto* spec : order) {
            require_input(spec->gpu_requirement <= c_.gpus,
                          fmt::format("task {} needs {} GPUs but the cluster has {}", spec->task_id,
                                      spec->gpu_requirement, c_.gpus));
            tasks_.push_back(make_task(*spec));
        }
    }

    TaskRt make_task(const TaskSpec& spec) {
        TaskRt t;
        t.spec = &spec;
        t.mem_cfg = spec.memory.value_or(c_.memory);

        auto jobs = expand_search_space(spec.grid, spec.total_steps, 0);
        Rng prng(derive_seed(seed_, "profiles", static_cast<std::uint64_t>(spec.task_id)));
        auto planted = assign_profiles(jobs.size(), spec.total_steps, spec.mix, prng);
        for (const auto& [id, p] : spec.job_profiles) planted.profiles[static_cast<std::size_t>(id)] = p;

        std::int64_t total = 0;
        for (std::size_t i = 0; i < jobs.size(); ++i) {
            JobRt jr(jobs[i], planted.profiles[i], w_.detector);
            const auto key = (static_cast<std::uint64_t>(spec.task_id) << 32) | static_cast<std::uint64_t>(i);
            jr.traj = generate_trajectory(jr.profile, spec.total_steps, w_.eval_interval,
                                          derive_seed(seed_, "trajectory", key));
            total += jr.job.scheduled_samples();
            t.jobs.push_back(std::move(jr));
        }
        if (spec.total_samples) {
            require_input(*spec.total_samples == total,
                          fmt::format("task {}: total_samples {} does not match the search space ({} samples)",
                                      spec.task_id, *spec.total_samples, total));
        }
        t.total_samples = total;

        // Ground truth: lowest noise-free validation loss over the run.
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < t.jobs.size(); ++i) {
            const auto& p = t.jobs[i].profile;
            for (std::int64_t s = 1; s <= spec.total_steps; ++s) {
                if (!is_eval_step(s, spec.total_steps, w_.eval_interval)) continue;
                const double v = p.val_at(s);
                if (v < best) {
                    best = v;
                    t.out.ground_truth_best = static_cast<int>(i);
                }
            }
        }

        profile_memory(t);

        const int ranks = flags_.batched ? spec.gpu_requirement : 1;
        const std::optional<std::size_t> max_jobs =
            flags_.batched ? std::nullopt : std::optional<std::size_t>(1);
        t.exec = intra::ExecutorState(ranks, max_jobs);

        for (const auto& j : t.jobs) {
            require_input(t.model.fits(j.job.params.per_adapter_batch_size),
                          fmt::format("task {} job {}: batch size {} does not fit in memory on its own", spec.task_id,
                                      j.job.job_id, j.job.params.per_adapter_batch_size));
        }

        // Throughput from a dry admission of the initial job set.
        intra::ExecutorState dry = t.exec;
        std::vector<intra::PendingJob> all;
        for (std::size_t i = 0; i < t.jobs.size(); ++i) all.push_back(pending_of(t, static_cast<int>(i)));
        intra::admit(dry, all, t.model);
        const double st = step_time(c_.cost, dry, flags_.batched, spec.cost_scale);
        t.throughput = static_cast<double>(dry.total_batch()) / st;
        t.overhead = static_cast<double>(w_.profiling_steps) * st;
        t.duration_estimate = t.overhead + inter::estimate_duration(static_cast<double>(total), t.throughput);

        const auto& d = w_.detector;
        const auto raw = static_cast<std::int64_t>(std::ceil(d.warmup_ratio * static_cast<double>(spec.total_steps)));
        const auto iv = w_.eval_interval;
        t.warmup_boundary = std::min(spec.total_steps, std::max<std::int64_t>(iv, (raw + iv - 1) / iv * iv));

        t.out.task_id = spec.task_id;
        t.out.gpus = spec.gpu_requirement;
        t.out.arrival = spec.arrival_time;
        t.out.duration_estimate = t.duration_estimate;
        t.out.throughput = t.throughput;
        t.out.profiling_overhead = t.overhead;
        t.out.samples_total = total;
        return t;
    }

    // Planted linear memory plus optional multiplicative noise, probed the way
    // a real profiler would: B_max search, grid samples, least-squares fit.
    void profile_memory(TaskRt& t) {
        const auto& m = t.mem_cfg;
        const auto task_id = static_cast<std::uint64_t>(t.spec->task_id);
        const auto seed = seed_;
        intra::MeasureFn measure = [m, task_id, seed](std::int64_t B) {
            double bytes = m.k0 + m.k1 * static_cast<double>(B * m.seq_len);
            if (m.noise > 0.0) {
                Rng r(derive_seed(seed, "memory", (task_id << 40) ^ static_cast<std::uint64_t>(B)));
                bytes *= 1.0 + m.noise * r.normal();
            }
            return bytes;
        };
        const auto bmax = intra::find_bmax(measure, m.capacity, m.safety_margin);
        const auto samples = intra::profile_grid(measure, bmax.b_max);
        intra::MemoryFit fit;
        if (std::any_of(samples.begin(), samples.end(),
                        [&](const auto& s) { return s.total_batch() != samples.front().total_batch(); })) {
            fit = intra::fit_memory_model(samples, m.seq_len);
        } else {
            // B_max = 1 leaves a single design point; fall back to the planted line.
            fit = {m.k0, m.k1, 1.0};
        }
        t.model = intra::MemoryModel{fit.k0, fit.k1, m.seq_len, m.capacity, m.safety_margin};
        t.out.b_max = bmax.b_max;
        t.out.memory_fit = fit;
        t.out.profiling_samples = samples.size();
    }

    // ---- event plumbing ---------------------------------------------------

    void push(Event e) {
        e.seq = seq_++;
        queue_.push(std::move(e));
    }

    void request_replan(inter::ReplanTrigger trigger) {
        if (replan_pending_) return;
        replan_pending_ = true;
        Event e;
        e.time = now_;
        e.kind = EventKind::Replan;
        e.trigger = trigger;
        push(e);
    }

    void dispatch(const Event& e) {
        switch (e.kind) {
            case EventKind::Arrival: on_arrival(e); break;
            case EventKind::Replan: on_replan(e); break;
            case EventKind::StepBatchComplete: on_step(e); break;
            case EventKind::EvalPoint: on_eval(e); break;
            case EventKind::JobExit: on_job_exit(e); break;
            case EventKind::TaskComplete: on_task_complete(e); break;
        }
    }

    TaskRt& task(int i) { return tasks_[static_cast<std::size_t>(i)]; }

    // ---- cluster level ----------------------------------------------------

    void on_arrival(const Event& e) {
        auto& t = task(e.task);
        t.phase = Phase::Queued;
        request_replan(inter::ReplanTrigger::TaskArrival);
    }

    std::vector<int> free_gpus() const {
        std::vector<bool> busy(static_cast<std::size_t>(c_.gpus), false);
        for (const auto& t : tasks_) {
            if (t.phase != Phase::Running) continue;
            for (int g : t.gpu_ids) busy[static_cast<std::size_t>(g)] = true;
        }
        std::vector<int> out;
        for (int g = 0; g < c_.gpus; ++g) {
            if (!busy[static_cast<std::size_t>(g)]) out.push_back(g);
        }
        return out;
    }

    void on_replan(const Event& e) {
        replan_pending_ = false;
        ++replans_;
        std::vector<int> queued;
        for (std::size_t i = 0; i < tasks_.size(); ++i) {
            if (tasks_[i].phase == Phase::Queued) queued.push_back(static_cast<int>(i));
        }
        if (queued.empty()) return;

        if (!flags_.scheduler) {
            // FIFO by arrival; the head blocks everything behind it.
            std::stable_sort(queued.begin(), queued.end(),
                             [&](int a, int b) { return task(a).spec->arrival_time < task(b).spec->arrival_time; });
            for (int i : queued) {
                auto free = free_gpus();
                const auto g = static_cast<std::size_t>(task(i).spec->gpu_requirement);
                if (free.size() < g) break;
                free.resize(g);
                start_task(i, free);
            }
            return;
        }

        inter::ClusterState cs;
        cs.now = inter::to_micros(now_);
        cs.G = c_.gpus;
        for (const auto& t : tasks_) {
            if (t.phase != Phase::Running) continue;
            cs.running.push_back({t.spec->task_id, t.gpu_ids, inter::to_micros(t.start),
                                  std::max<inter::Micros>(1, inter::to_micros(remaining_estimate(t)))});
        }
        std::map<int, int> index_of;
        for (int i : queued) {
            const auto& t = task(i);
            cs.queued.push_back({t.spec->task_id, std::max<inter::Micros>(1, inter::to_micros(t.duration_estimate)),
                                 t.spec->gpu_requirement});
            index_of[t.spec->task_id] = i;
        }
        const auto plan = inter::replan(cs, e.trigger);
        all_optimal_ = all_optimal_ && plan.optimal;
        for (const auto& a : plan.assignments) {
            if (a.pinned || a.start != cs.now) continue;
            start_task(index_of.at(a.task_id), a.gpu_ids);
        }
    }

    double remaining_estimate(const TaskRt& t) const {
        std::int64_t samples = 0;
        for (const auto& j : t.jobs) {
            if (is_terminal(j.job.status)) continue;
            samples += (j.job.total_steps - j.steps_done) * j.job.params.per_adapter_batch_size;
        }
        return std::max(0.0, t.ready_at - now_) + static_cast<double>(samples) / t.throughput;
    }

    void start_task(int i, std::vector<int> gpus) {
        auto& t = task(i);
        std::sort(gpus.begin(), gpus.end());
        const auto free = free_gpus();
        for (int g : gpus) {
            check_invariant(std::binary_search(free.begin(), free.end(), g),
                            fmt::format("task {} placed on busy GPU {}", t.spec->task_id, g));
        }
        check_invariant(static_cast<int>(gpus.size()) == t.spec->gpu_requirement, "wrong GPU count at task start");
        t.phase = Phase::Running;
        t.gpu_ids = gpus;
        t.start = now_;
        t.ready_at = now_ + t.overhead;
        for (std::size_t j = 0; j < t.jobs.size(); ++j) t.pending.insert(static_cast<int>(j));
        admit_pending(i);
        check_capacity();
        launch_.insert(i);
    }

    void check_capacity() const {
        int used = 0;
        std::set<int> ids;
        for (const auto& t : tasks_) {
            if (t.phase != Phase::Running) continue;
            used += static_cast<int>(t.gpu_ids.size());
            for (int g : t.gpu_ids) check_invariant(ids.insert(g).second, fmt::format("GPU {} double-booked", g));
        }
        check_invariant(used <= c_.gpus, "cluster GPU capacity exceeded");
    }

    void on_task_complete(const Event& e) {
        auto& t = task(e.task);
        t.phase = Phase::Done;
        t.end = now_;
        gantt_.push_back({t.spec->task_id, t.gpu_ids, t.start, t.end});
        request_replan(inter::ReplanTrigger::TaskCompletion);
    }

    // ---- executor level ---------------------------------------------------

    void flush_launches() {
        for (int i : launch_) {
            auto& t = task(i);
            if (t.phase != Phase::Running || t.stepping || t.exec.empty()) continue;
            const double st = step_time(c_.cost, t.exec, flags_.batched, t.spec->cost_scale);
            check_invariant(st > 0.0, "non-positive step time");
            Event e;
            e.time = std::max(now_, t.ready_at) + st;
            e.kind = EventKind::StepBatchComplete;
            e.task = i;
            push(e);
            t.stepping = true;
        }
        launch_.clear();
    }

    void note_memory(TaskRt& t) {
        t.exec.check();
        const double used = t.model.predict(t.exec.total_batch());
        check_invariant(used <= t.model.budget(),
                        fmt::format("task {}: memory safety violated ({} > {})", t.spec->task_id, used,
                                    t.model.budget()));
        t.peak_memory = std::max(t.peak_memory, used / t.model.budget());
    }

    void mark_admitted(TaskRt& t, int j) {
        t.pending.erase(j);
        auto& job = t.jobs[static_cast<std::size_t>(j)].job;
        if (job.status == JobStatus::Pending) job.transition(JobStatus::Warmup);
    }

    void admit_pending(int i) {
        auto& t = task(i);
        std::vector<intra::PendingJob> list;
        for (int j : t.pending) list.push_back(pending_of(t, j));
        for (const auto& a : intra::admit(t.exec, list, t.model)) mark_admitted(t, a.job_id);
        note_memory(t);
    }

    void refill(int i, std::int64_t exited_batch) {
        auto& t = task(i);
        if (t.pending.empty()) return;
        std::vector<intra::PendingJob> list;
        for (int j : t.pending) list.push_back(pending_of(t, j));
        if (auto a = intra::backfill(t.exec, exited_batch, list, t.model)) mark_admitted(t, a->job_id);
        admit_pending(i);
    }

    void on_step(const Event& e) {
        auto& t = task(e.task);
        t.stepping = false;
        std::vector<int> ids;
        for (const auto& r : t.exec.resident()) ids.push_back(r.job_id);
        std::sort(ids.begin(), ids.end());
        for (int j : ids) {
            auto& jr = t.jobs[static_cast<std::size_t>(j)];
            check_invariant(jr.steps_done < jr.job.total_steps, "resident job has no steps left");
            ++jr.steps_done;
            const double loss = jr.traj.train[static_cast<std::size_t>(jr.steps_done - 1)].loss;
            jr.detector.on_train(loss);
            if (is_eval_step(jr.steps_done, jr.job.total_steps, w_.eval_interval)) {
                Event ev;
                ev.time = now_;
                ev.kind = EventKind::EvalPoint;
                ev.task = e.task;
                ev.job = j;
                push(ev);
            }
        }
        launch_.insert(e.task);
    }

    void push_exit(int ti, int j, ExitKind kind, std::optional<std::int64_t> ckpt = std::nullopt) {
        Event ev;
        ev.time = now_;
        ev.kind = EventKind::JobExit;
        ev.task = ti;
        ev.job = j;
        ev.exit = kind;
        ev.checkpoint = ckpt;
        push(ev);
    }

    void on_eval(const Event& e) {
        auto& t = task(e.task);
        auto& jr = t.jobs[static_cast<std::size_t>(e.job)];
        check_invariant(jr.val_cursor < jr.traj.val.size(), "evaluation past the end of the trajectory");
        const auto vp = jr.traj.val[jr.val_cursor++];
        check_invariant(vp.step == jr.steps_done, "evaluation step does not match training progress");
        jr.job.record_val(vp);

        if (flags_.early_exit) {
            const bool overfit_on = jr.job.status == JobStatus::Training;
            const auto obs = jr.detector.on_eval(vp.step, vp.loss, overfit_on);
            if (obs.decision.exit) {
                const auto kind = *obs.decision.reason == early_exit::ExitReason::Diverging ? ExitKind::Diverging
                                                                                          : ExitKind::Overfitting;
                push_exit(e.task, e.job, kind, obs.decision.checkpoint_step);
                return;
            }
        }
        if (jr.job.status == JobStatus::Warmup && jr.steps_done >= t.warmup_boundary) {
            if (flags_.early_exit) {
                push_exit(e.task, e.job, ExitKind::Park);
                return;
            }
            jr.job.transition(JobStatus::Training);
        }
        if (jr.steps_done == jr.job.total_steps) push_exit(e.task, e.job, ExitKind::Completed);
    }

    void finish_job(JobRt& jr, JobStatus status) {
        jr.job.transition(status);
        jr.exit_step = jr.steps_done;
        jr.exit_time = now_;
        if (status != JobStatus::Completed) jr.saved = (jr.job.total_steps - jr.steps_done) * jr.job.params.per_adapter_batch_size;
    }

    void on_job_exit(const Event& e) {
        auto& t = task(e.task);
        auto& jr = t.jobs[static_cast<std::size_t>(e.job)];
        std::int64_t batch = jr.job.params.per_adapter_batch_size;
        if (t.exec.contains(e.job)) batch = t.exec.remove(e.job).batch_size;
        switch (e.exit) {
            case ExitKind::Diverging: finish_job(jr, JobStatus::ExitedDiverging); break;
            case ExitKind::Overfitting:
                finish_job(jr, JobStatus::ExitedOverfitting);
                jr.checkpoint = e.checkpoint;
                break;
            case ExitKind::Completed: finish_job(jr, JobStatus::Completed); break;
            case ExitKind::Park: t.parked.push_back(e.job); break;
        }
        refill(e.task, batch);
        settle(e.task);
        launch_.insert(e.task);
    }

    // Runs warmup selection once nothing is left to reach the boundary, and
    // completes the task once every job is terminal.
    void settle(int i) {
        auto& t = task(i);
        if (!t.exec.empty() || !t.pending.empty()) return;
        if (!t.parked.empty()) {
            std::vector<early_exit::WarmupCandidate> cands;
            for (int j : t.parked) {
                const auto& jr = t.jobs[static_cast<std::size_t>(j)];
                cands.push_back({j, jr.traj.val[jr.val_cursor - 1].loss});
            }
            t.parked.clear();
            const auto sel = early_exit::warmup_select(std::move(cands), w_.detector.warmup_select_ratio);
            for (int j : sel.evicted) finish_job(t.jobs[static_cast<std::size_t>(j)], JobStatus::ExitedUnderperforming);
            for (int j : sel.kept) {
                auto& jr = t.jobs[static_cast<std::size_t>(j)];
                jr.job.transition(JobStatus::Training);
                if (jr.steps_done == jr.job.total_steps) {
                    finish_job(jr, JobStatus::Completed);
                } else {
                    t.pending.insert(j);
                }
            }
            admit_pending(i);
            if (!t.exec.empty()) return;
        }
        const bool done = std::all_of(t.jobs.begin(), t.jobs.end(), [](const auto& j) { return is_terminal(j.job.status); });
        if (done) {
            Event ev;
            ev.time = now_;
            ev.kind = EventKind::TaskComplete;
            ev.task = i;
            push(ev);
        }
    }

    // ---- report -----------------------------------------------------------

    SimReport build_report() {
        SimReport r;
        r.flags = flags_;
        r.seed = seed_;
        r.events_processed = events_;
        r.replans = replans_;
        r.all_plans_optimal = all_optimal_;
        double ratio_sum = 0.0;
        for (auto& t : tasks_) {
            auto out = t.out;
            out.gpu_ids = t.gpu_ids;
            out.start = t.start;
            out.end = t.end;
            out.peak_memory_fraction = t.peak_memory;
            r.makespan = std::max(r.makespan, t.end);

            double with = std::numeric_limits<double>::infinity();
            double without = std::numeric_limits<double>::infinity();
            for (const auto& jr : t.jobs) {
                const auto& j = jr.job;
                check_invariant(is_terminal(j.status), "job left in a non-terminal state");
                JobOutcome jo;
                jo.task_id = t.spec->task_id;
                jo.job_id = j.job_id;
                jo.params = j.params;
                jo.planted_kind = jr.profile.kind;
                jo.status = j.status;
                jo.best_val = j.best_val;
                jo.checkpoint_step = jr.checkpoint;
                jo.steps_trained = jr.steps_done;
                jo.exit_step = jr.exit_step;
                jo.exit_time = jr.exit_time;
                jo.samples_scheduled = j.scheduled_samples();
                jo.samples_trained = jr.steps_done * j.params.per_adapter_batch_size;
                jo.samples_saved = jr.saved;
                check_invariant(jo.samples_trained + jo.samples_saved == jo.samples_scheduled,
                                fmt::format("task {} job {}: sample conservation broken", jo.task_id, jo.job_id));
                r.samples_total += jo.samples_scheduled;
                r.samples_trained += jo.samples_trained;
                out.samples_trained += jo.samples_trained;
                switch (j.status) {
                    case JobStatus::ExitedDiverging: r.samples_saved_by[0] += jo.samples_saved; break;
                    case JobStatus::ExitedOverfitting: r.samples_saved_by[1] += jo.samples_saved; break;
                    case JobStatus::ExitedUnderperforming: r.samples_saved_by[2] += jo.samples_saved; break;
                    default: break;
                }
                if (j.best_val && j.best_val->loss < with) {
                    with = j.best_val->loss;
                    out.best_job = j.job_id;
                }
                if (auto b = jr.traj.best_val()) without = std::min(without, b->loss);
                r.jobs.push_back(std::move(jo));
            }
            const auto& gt = t.jobs[static_cast<std::size_t>(out.ground_truth_best)];
            out.ground_truth_best_completed = gt.job.status == JobStatus::Completed;
            out.best_val_with_ee = with;
            out.best_val_without_ee = without;
            out.loss_ratio = with / without;
            ratio_sum += out.loss_ratio;
            r.tasks.push_back(std::move(out));
        }
        r.loss_ratio = tasks_.empty() ? 1.0 : ratio_sum / static_cast<double>(tasks_.size());
        check_invariant(r.samples_saved() <= r.samples_total, "saved more samples than scheduled");
        r.gantt = gantt_;
        std::sort(r.gantt.begin(), r.gantt.end(), [](const GanttRow& a, const GanttRow& b) {
            if (a.start != b.start) return a.start < b.start;
            return a.task_id < b.task_id;
        });
        return r;
    }

    WorkloadSpec w_;
    ClusterConfig c_;
    PolicyFlags flags_;
    std::uint64_t seed_;
    std::vector<TaskRt> tasks_;
    std::priority_queue<Event, std::vector<Event>, EventLater> queue_;
    std::set<int> launch_;
    std::vector<GanttRow> gantt_;
    double now_ = 0.0;
    std::uint64_t seq_ = 0;
    std::uint64_t events_ = 0;
    std::uint64_t replans_ = 0;
    bool replan_pending_ = false;
    bool all_optimal_ = true;
};

}  // namespace

SimReport run(const WorkloadSpec& workload, const ClusterConfig& cluster, PolicyFlags flags, std::uint64_t seed) {
    Simulation sim(workload, cluster, flags, seed);
    return sim.run();
}

bool AblationReport::ee_chain_monotone() const {
    return b_s_ee.makespan <= b_ee.makespan && b_ee.makespan <= b.makespan;
}

bool AblationReport::scheduler_helps() const { return b_s.makespan <= b.makespan; }

bool AblationReport::ee_never_hurts() const {
    return b_ee.makespan <= b.makespan && b_s_ee.makespan <= b_s.makespan;
}

AblationReport ablate(const WorkloadSpec& workload, const ClusterConfig& cluster, std::uint64_t seed) {
    AblationReport a;
    a.b = run(workload, cluster, {true, false, false}, seed);
    a.b_s = run(workload, cluster, {true, true, false}, seed);
    a.b_ee = run(workload, cluster, {true, false, true}, seed);
    a.b_s_ee = run(workload, cluster, {true, true, true}, seed);
    return a;
}

std::vector<GanttRow> emit_gantt(const SimReport& report) {
    auto rows = report.gantt;
    std::sort(rows.begin(), rows.end(), [](const GanttRow& a, const GanttRow& b) {
        if (a.start != b.start) return a.start < b.start;
        return a.task_id < b.task_id;
    });
    return rows;
}

std::vector<GanttRow> emit_gantt(const inter::SchedulePlan& plan) {
    std::vector<GanttRow> rows;
    for (const auto& a : plan.assignments) {
        rows.push_back({a.task_id, a.gpu_ids, inter::to_seconds(a.start), inter::to_seconds(a.end)});
    }
    std::sort(rows.begin(), rows.end(), [](const GanttRow& a, const GanttRow& b) {
        if (a.start != b.start) return a.start < b.start;
        return a.task_id < b.task_id;
    });
    return rows;
}

inter::SchedulePlan plan_from_gantt(const std::vector<GanttRow>& rows) {
    inter::SchedulePlan plan;
    for (const auto& r : rows) {
        inter::Assignment a;
        a.task_id = r.task_id;
        a.start = inter::to_micros(r.start);
        a.end = inter::to_micros(r.end);
        a.gpu_ids = r.gpu_ids;
        plan.makespan = std::max(plan.makespan, a.end);
        plan.assignments.push_back(std::move(a));
    }
    std::sort(plan.assignments.begin(), plan.assignments.end(),
              [](const auto& a, const auto& b) { return a.task_id < b.task_id; });
    return plan;
}

}  // namespace lorasched::sim
