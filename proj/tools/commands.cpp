// SPDX-License-Identifier: Apache-2.0
#include "commands.hpp"

#include <algorithm>
#include <filesystem>
#include <sstream>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "lorasched/config.hpp"
#include "lorasched/early_exit.hpp"
#include "lorasched/errors.hpp"
#include "lorasched/inter_sched.hpp"
#include "lorasched/lora_check.hpp"
#include "lorasched/report_io.hpp"
#include "lorasched/simulator.hpp"
#include "lorasched/suites.hpp"
#include "lorasched/workload.hpp"

#ifndef LORASCHED_VERSION
#define LORASCHED_VERSION "dev"
#endif

namespace lorasched::cli {

namespace {

namespace fs = std::filesystem;

std::string join_path(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

// ---- simulate -------------------------------------------------------------

struct SimulateArgs {
    std::string workload;
    std::string cluster;
    std::string flags = "b,s,ee";
    std::uint64_t seed = 0;
    std::string out = "out";
    bool ablate = false;
};

int cmd_simulate(const SimulateArgs& a, std::ostream& out) {
    io::Manifest m;
    m.command = a.ablate ? "simulate --ablate" : "simulate";
    m.started_at = io::utc_timestamp();
    const auto workload = sim::load_workload(a.workload);
    const auto cluster = sim::load_cluster(a.cluster);
    m.config_hash = io::hash_hex(sim::canonical_json(workload) + "\n" + sim::canonical_json(cluster));
    m.seed = a.seed;
    m.version = LORASCHED_VERSION;

    auto emit = [&](const std::string& name, const std::string& text) {
        io::write_file(join_path(a.out, name), text);
        m.outputs.push_back(name);
    };

    if (a.ablate) {
        const auto ab = sim::ablate(workload, cluster, a.seed);
        emit("report_b.json", io::report_json(ab.b));
        emit("report_b_s.json", io::report_json(ab.b_s));
        emit("report_b_ee.json", io::report_json(ab.b_ee));
        emit("report_b_s_ee.json", io::report_json(ab.b_s_ee));
        emit("ablation.json", io::ablation_json(ab));
        out << fmt::format("makespan b={} b_s={} b_ee={} b_s_ee={}\n", io::fmt_double(ab.b.makespan),
                           io::fmt_double(ab.b_s.makespan), io::fmt_double(ab.b_ee.makespan),
                           io::fmt_double(ab.b_s_ee.makespan));
        out << fmt::format("ratio b/b_s_ee={}\n", io::fmt_double(ab.ratio_b_over_b_s_ee()));
    } else {
        const auto flags = sim::PolicyFlags::parse(a.flags);
        const auto r = sim::run(workload, cluster, flags, a.seed);
        emit("report.json", io::report_json(r));
        emit("gantt.csv", io::gantt_csv(sim::emit_gantt(r)));
        emit("samples_saved.csv", io::samples_saved_csv(r));
        out << fmt::format("makespan {}\n", io::fmt_double(r.makespan));
        out << fmt::format("samples_saved_fraction {}\n", io::fmt_double(r.saved_fraction()));
        out << fmt::format("loss_ratio {}\n", io::fmt_double(r.loss_ratio));
    }
    m.finished_at = io::utc_timestamp();
    m.outputs.push_back("manifest.json");
    io::write_file(join_path(a.out, "manifest.json"), io::manifest_json(m));
    return kExitOk;
}

// ---- suite ----------------------------------------------------------------

struct SuiteArgs {
    std::string kind = "cluster";
    std::uint64_t seed = 0;
    double redundancy = 0.75;
    std::string out = ".";
};

int cmd_suite(const SuiteArgs& a, std::ostream& out) {
    sim::WorkloadSpec w;
    sim::ClusterConfig c;
    if (a.kind == "cluster") {
        w = sim::cluster_workload(a.seed);
        c = sim::eight_gpu_cluster();
    } else if (a.kind == "early-exit") {
        w = sim::early_exit_workload(a.redundancy);
        c = sim::single_gpu_cluster();
    } else {
        throw InputError(fmt::format("unknown suite kind '{}' (expected cluster or early-exit)", a.kind));
    }
    io::write_file(join_path(a.out, "workload.json"), sim::canonical_json(w) + "\n");
    io::write_file(join_path(a.out, "cluster.json"), sim::canonical_json(c) + "\n");
    out << fmt::format("wrote {} and {}\n", join_path(a.out, "workload.json"), join_path(a.out, "cluster.json"));
    return kExitOk;
}

// ---- schedule -------------------------------------------------------------

struct ScheduleArgs {
    std::string instance;
    std::string method = "exact";
    std::string out;
    double time_limit = 1.0;
};

int cmd_schedule(const ScheduleArgs& a, std::ostream& out) {
    const auto inst = io::parse_schedule_instance(sim::read_file(a.instance));
    inter::SchedulePlan plan;
    if (a.method == "exact") {
        plan = inter::solve_exact(inst, {a.time_limit});
    } else if (a.method == "sjf") {
        plan = inter::solve_sjf(inst);
    } else if (a.method == "oracle") {
        const auto o = inter::brute_force_oracle(inst);
        plan = inter::plan_from_starts(inst, o.starts);
        plan.optimal = true;
    } else {
        throw InputError(fmt::format("unknown method '{}' (expected exact, sjf or oracle)", a.method));
    }
    inter::check_plan(inst, plan);
    const auto csv = io::plan_csv(plan);
    if (a.out.empty()) {
        out << csv;
    } else {
        io::write_file(a.out, csv);
    }
    out << fmt::format("C_max {}\n", io::fmt_double(inter::to_seconds(plan.makespan)));
    if (a.method == "exact") out << fmt::format("optimal {}\n", plan.optimal ? "true" : "false");
    return kExitOk;
}

// ---- detect ---------------------------------------------------------------

struct DetectArgs {
    std::string trace;
    std::string out;
    std::int64_t total_steps = 0;
    early_exit::DetectorConfig cfg;
};

int cmd_detect(const DetectArgs& a, std::ostream& out) {
    const auto rows = parse_trace_csv(sim::read_file(a.trace));
    const auto ingested = ingest_trace(rows, a.cfg.alpha);
    const auto& traj = ingested.trajectory;
    std::int64_t total = a.total_steps;
    if (total <= 0) total = traj.train.empty() ? 0 : traj.train.back().step;
    const auto csv = io::decision_stream_csv(traj, a.cfg, total);
    if (a.out.empty()) {
        out << csv;
    } else {
        io::write_file(a.out, csv);
    }
    if (ingested.resorted) out << "warning: trace steps were not monotone and have been sorted\n";
    return kExitOk;
}

// ---- analyze-warmup -------------------------------------------------------

struct WarmupArgs {
    std::string traces;
    std::string out;
    std::int64_t total_steps = 0;
    std::vector<double> fractions = {0.01, 0.02, 0.05, 0.1, 0.2, 0.3};
    double alpha = 0.1;
};

int cmd_analyze_warmup(const WarmupArgs& a, std::ostream& out) {
    require_input(fs::is_directory(a.traces), fmt::format("'{}' is not a directory", a.traces));
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(a.traces)) {
        if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    require_input(files.size() >= 2, fmt::format("'{}' needs at least two .csv traces", a.traces));

    std::vector<early_exit::RunOutcome> runs;
    std::int64_t total = a.total_steps;
    for (std::size_t i = 0; i < files.size(); ++i) {
        std::vector<TraceRow> rows;
        try {
            rows = parse_trace_csv(sim::read_file(files[i].string()));
        } catch (const InputError& e) {
            throw InputError(fmt::format("{}: {}", files[i].string(), e.what()));
        }
        auto traj = ingest_trace(std::move(rows), a.alpha).trajectory;
        if (a.total_steps <= 0 && !traj.train.empty()) total = std::max(total, traj.train.back().step);
        runs.push_back({static_cast<int>(i), std::move(traj)});
    }
    require_input(total >= 1, "could not determine total_steps from the traces");
    const auto metrics = early_exit::warmup_reliability(runs, total, a.fractions);
    std::string csv = "fraction,rho,top_quartile_coverage,best_in_top_quartile,skipped\n";
    for (const auto& m : metrics) {
        csv += fmt::format("{},{},{},{},{}\n", io::fmt_double(m.fraction), m.rho ? io::fmt_double(*m.rho) : "",
                           io::fmt_double(m.top_quartile_coverage), m.best_in_top_quartile ? 1 : 0, m.skipped ? 1 : 0);
    }
    if (a.out.empty()) {
        out << csv;
    } else {
        io::write_file(a.out, csv);
    }
    return kExitOk;
}

// ---- gemm-check -----------------------------------------------------------

struct GemmArgs {
    std::size_t adapters = 3;
    std::vector<std::size_t> ranks = {16, 32, 64};
    std::vector<std::size_t> tokens;
    std::size_t d_in = 64;
    std::size_t d_out = 64;
    std::size_t block_size = 16;
    std::size_t specs = 20;
    std::uint64_t seed = 0;
    double forward_tol = 1e-12;
    double grad_tol = 1e-6;
    std::string json_out;
};

int cmd_gemm_check(const GemmArgs& a, std::ostream& out) {
    require_input(a.adapters >= 1, "--adapters must be >= 1");
    require_input(!a.ranks.empty(), "--ranks must not be empty");
    require_input(a.specs >= 1, "--specs must be >= 1");
    require_input(a.block_size >= 1, "--block-size must be >= 1");
    for (auto r : a.ranks) {
        require_input(r >= 1 && r <= std::min(a.d_in, a.d_out),
                      fmt::format("rank {} is impossible for a {}x{} layer", r, a.d_in, a.d_out));
    }
    for (auto t : a.tokens) require_input(t >= 1, "token counts must be >= 1");

    double fwd = 0.0, grad = 0.0, waste = 0.0;
    bool bitwise = true;
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    out << "spec,adapters,forward_max_rel,grad_max_rel,padded_bitwise_equal,waste_ratio\n";
    for (std::size_t s = 0; s < a.specs; ++s) {
        const auto seed = derive_seed(a.seed, "gemm_check", s);
        Rng rng(derive_seed(seed, "shape"));
        std::vector<std::size_t> ranks, tokens;
        for (std::size_t i = 0; i < a.adapters; ++i) {
            ranks.push_back(a.ranks[i % a.ranks.size()]);
            tokens.push_back(a.tokens.empty()
                                 ? static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(2 * a.block_size)))
                                 : a.tokens[i % a.tokens.size()]);
        }
        const auto rep = lora::check_random_spec(ranks, tokens, a.d_in, a.d_out, a.block_size, seed);
        out << fmt::format("{},{},{},{},{},{}\n", s, a.adapters, io::fmt_double(rep.forward_max_rel),
                           io::fmt_double(rep.grad_max_rel()), rep.padded_bitwise_equal ? 1 : 0,
                           io::fmt_double(rep.flops.waste_ratio));
        rows.push_back({{"spec", s},
                        {"ranks", ranks},
                        {"tokens", tokens},
                        {"forward_max_rel", rep.forward_max_rel},
                        {"grad_dx_max_rel", rep.grad_dx_max_rel},
                        {"grad_da_max_rel", rep.grad_da_max_rel},
                        {"grad_db_max_rel", rep.grad_db_max_rel},
                        {"padded_bitwise_equal", rep.padded_bitwise_equal},
                        {"flops",
                         {{"base", rep.flops.base_flops},
                          {"useful_lora", rep.flops.useful_lora_flops},
                          {"wide_lora", rep.flops.wide_lora_flops},
                          {"waste_ratio", rep.flops.waste_ratio}}}});
        fwd = std::max(fwd, rep.forward_max_rel);
        grad = std::max(grad, rep.grad_max_rel());
        waste = std::max(waste, rep.flops.waste_ratio);
        bitwise = bitwise && rep.padded_bitwise_equal;
    }
    out << fmt::format("max forward_rel {} (tol {})\n", io::fmt_double(fwd), io::fmt_double(a.forward_tol));
    out << fmt::format("max grad_rel {} (tol {})\n", io::fmt_double(grad), io::fmt_double(a.grad_tol));
    out << fmt::format("padded bitwise equal {}\n", bitwise ? "yes" : "no");
    const bool ok = fwd <= a.forward_tol && grad <= a.grad_tol && bitwise;
    out << (ok ? "PASS\n" : "FAIL\n");
    if (!a.json_out.empty()) {
        nlohmann::ordered_json j;
        j["max_forward_rel"] = fwd;
        j["max_grad_rel"] = grad;
        j["max_waste_ratio"] = waste;
        j["padded_bitwise_equal"] = bitwise;
        j["forward_tol"] = a.forward_tol;
        j["grad_tol"] = a.grad_tol;
        j["pass"] = ok;
        j["specs"] = std::move(rows);
        io::write_file(a.json_out, j.dump(2) + "\n");
    }
    check_invariant(ok, "grouped math deviates from the reference beyond tolerance");
    return kExitOk;
}

void add_detector_options(CLI::App* app, early_exit::DetectorConfig& cfg) {
    app->add_option("--alpha", cfg.alpha, "EMA smoothing factor")->capture_default_str();
    app->add_option("--window", cfg.window, "slope regression window (evaluations)")->capture_default_str();
    app->add_option("--tau-slope", cfg.tau_slope, "divergence slope threshold")->capture_default_str();
    app->add_option("--tau-gap", cfg.tau_gap, "overfitting relative gap threshold")->capture_default_str();
    app->add_option("--patience-div", cfg.patience_div, "divergence patience")->capture_default_str();
    app->add_option("--patience-ovf", cfg.patience_ovf, "overfitting patience")->capture_default_str();
    app->add_option("--warmup-ratio", cfg.warmup_ratio, "fraction of steps with overfitting checks off")
        ->capture_default_str();
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"lorasched: multi-LoRA tuning scheduler, simulator and checks"};
    app.set_version_flag("--version", std::string(LORASCHED_VERSION));
    app.require_subcommand(1);

    SimulateArgs sa;
    auto* sim_cmd = app.add_subcommand("simulate", "run the cluster simulator");
    sim_cmd->add_option("--workload", sa.workload, "workload JSON")->required();
    sim_cmd->add_option("--cluster", sa.cluster, "cluster JSON")->required();
    sim_cmd->add_option("--flags", sa.flags, "comma-separated subset of b,s,ee")->capture_default_str();
    sim_cmd->add_option("--seed", sa.seed, "run seed")->capture_default_str();
    sim_cmd->add_option("--out", sa.out, "output directory")->capture_default_str();
    sim_cmd->add_flag("--ablate", sa.ablate, "run the B, B+S, B+EE, B+S+EE grid");

    SuiteArgs su;
    auto* suite_cmd = app.add_subcommand("suite", "write a seeded synthetic workload and cluster");
    suite_cmd->add_option("--kind", su.kind, "cluster or early-exit")->capture_default_str();
    suite_cmd->add_option("--seed", su.seed, "suite seed")->capture_default_str();
    suite_cmd->add_option("--redundancy", su.redundancy, "planted redundant fraction (early-exit)")
        ->capture_default_str();
    suite_cmd->add_option("--out", su.out, "output directory")->capture_default_str();

    ScheduleArgs sc;
    auto* sched_cmd = app.add_subcommand("schedule", "place tasks on GPUs");
    sched_cmd->add_option("--instance", sc.instance, "instance JSON {G, tasks[{task_id, duration, gpus}]}")
        ->required();
    sched_cmd->add_option("--method", sc.method, "exact, sjf or oracle")->capture_default_str();
    sched_cmd->add_option("--out", sc.out, "plan CSV path (stdout when omitted)");
    sched_cmd->add_option("--time-limit", sc.time_limit, "exact solver budget in seconds")->capture_default_str();

    DetectArgs de;
    auto* det_cmd = app.add_subcommand("detect", "run the early-exit detector over a loss trace");
    det_cmd->add_option("--trace", de.trace, "CSV with step,train_loss[,val_loss]")->required();
    det_cmd->add_option("--out", de.out, "decision stream CSV path (stdout when omitted)");
    det_cmd->add_option("--total-steps", de.total_steps, "run length (default: last step in the trace)");
    add_detector_options(det_cmd, de.cfg);

    WarmupArgs wa;
    auto* wu_cmd = app.add_subcommand("analyze-warmup", "warmup-length reliability over a directory of traces");
    wu_cmd->add_option("--traces", wa.traces, "directory of trace CSVs")->required();
    wu_cmd->add_option("--out", wa.out, "metrics CSV path (stdout when omitted)");
    wu_cmd->add_option("--total-steps", wa.total_steps, "run length (default: longest trace)");
    wu_cmd->add_option("--fractions", wa.fractions, "warmup fractions")->delimiter(',');
    wu_cmd->add_option("--alpha", wa.alpha, "EMA smoothing factor")->capture_default_str();

    GemmArgs ga;
    auto* gemm_cmd = app.add_subcommand("gemm-check", "verify grouped LoRA math against reference oracles");
    gemm_cmd->add_option("--adapters", ga.adapters, "adapters per spec")->capture_default_str();
    gemm_cmd->add_option("--ranks", ga.ranks, "ranks, cycled over adapters")->delimiter(',');
    gemm_cmd->add_option("--tokens", ga.tokens, "tokens per adapter, cycled (random when omitted)")->delimiter(',');
    gemm_cmd->add_option("--d-in", ga.d_in, "input width k")->capture_default_str();
    gemm_cmd->add_option("--d-out", ga.d_out, "output width n")->capture_default_str();
    gemm_cmd->add_option("--block-size", ga.block_size, "schedule-table block size")->capture_default_str();
    gemm_cmd->add_option("--specs", ga.specs, "number of random specs")->capture_default_str();
    gemm_cmd->add_option("--seed", ga.seed, "seed")->capture_default_str();
    gemm_cmd->add_option("--json", ga.json_out, "also write a JSON report to this path");

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitInput;
    }

    try {
        if (*sim_cmd) return cmd_simulate(sa, out);
        if (*suite_cmd) return cmd_suite(su, out);
        if (*sched_cmd) return cmd_schedule(sc, out);
        if (*det_cmd) return cmd_detect(de, out);
        if (*wu_cmd) return cmd_analyze_warmup(wa, out);
        if (*gemm_cmd) return cmd_gemm_check(ga, out);
    } catch (const InputError& e) {
        err << "error: " << e.what() << "\n";
        return kExitInput;
    } catch (const InvariantViolation& e) {
        err << "invariant violation: " << e.what() << "\n";
        return kExitInvariant;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return kExitInvariant;
    }
    return kExitInput;
}

}  // namespace lorasched::cli
