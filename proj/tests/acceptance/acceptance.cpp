// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL line per criterion on stdout, progress on
// stderr. Exit status is 0 only when every criterion passes.
//
//   lorasched_acceptance [data_dir]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "../stream_compare.hpp"
#include "commands.hpp"
#include "lorasched/config.hpp"
#include "lorasched/early_exit.hpp"
#include "lorasched/errors.hpp"
#include "lorasched/inter_sched.hpp"
#include "lorasched/intra_sched.hpp"
#include "lorasched/lora_check.hpp"
#include "lorasched/report_io.hpp"
#include "lorasched/rng.hpp"
#include "lorasched/simulator.hpp"
#include "lorasched/suites.hpp"

using namespace lorasched;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
    bool pass = false;
    std::string detail;
};

void progress(const std::string& s) { std::cerr << s << std::endl; }

// ---- 1: exact solver vs exhaustive oracle ----------------------------------

Verdict scheduler_exactness() {
    const auto t0 = Clock::now();
    Rng rng(derive_seed(2024, "acceptance/exactness"));
    const int gs[] = {1, 2, 4};
    int mismatches = 0, sjf_better = 0;
    constexpr int kInstances = 1000;
    for (int i = 0; i < kInstances; ++i) {
        inter::SchedInstance inst;
        inst.G = rng.uniform() < 0.5 ? 4 : 8;
        const auto n = rng.uniform_int(1, 6);
        for (int j = 0; j < n; ++j) {
            inst.tasks.push_back({j, rng.uniform_int(1, 20) * inter::kMicrosPerSecond, gs[rng.uniform_int(0, 2)]});
        }
        const auto exact = inter::solve_exact(inst);
        inter::check_plan(inst, exact);
        const auto oracle = inter::brute_force_oracle(inst);
        if (exact.makespan != oracle.makespan || !exact.optimal) ++mismatches;
        if (inter::solve_sjf(inst).makespan < exact.makespan) ++sjf_better;
    }
    const double secs = since(t0);
    return {mismatches == 0 && sjf_better == 0 && secs < 60.0,
            fmt::format("{} instances, {} mismatches vs oracle, {} where SJF beat exact, {:.2f} s (limit 60 s)",
                        kInstances, mismatches, sjf_better, secs)};
}

// ---- 2: solve time on the 11-task / 8-GPU shape ----------------------------

Verdict scheduler_speed() {
    Rng rng(derive_seed(2024, "acceptance/speed"));
    const int gs[] = {4, 4, 4, 2, 2, 2, 1, 1, 1, 1, 1};
    constexpr int kInstances = 100;
    double worst = 0.0, total = 0.0;
    int unproven = 0;
    for (int i = 0; i < kInstances; ++i) {
        inter::SchedInstance inst{8, {}, {}};
        // Durations between half an hour and six hours.
        for (int j = 0; j < 11; ++j) inst.tasks.push_back({j, inter::to_micros(rng.uniform(1800, 21600)), gs[j]});
        const auto t0 = Clock::now();
        const auto plan = inter::solve_exact(inst);
        const double s = since(t0);
        inter::check_plan(inst, plan);
        worst = std::max(worst, s);
        total += s;
        if (!plan.optimal) ++unproven;
    }
    return {unproven == 0 && worst < 1.0,
            fmt::format("{} instances (g = 4,4,4,2,2,2,1x5, G = 8), {} not proven optimal, worst {:.3f} s, mean {:.3f} s "
                        "(limit 1 s)",
                        kInstances, unproven, worst, total / kInstances)};
}

// ---- 3: separating instance -------------------------------------------------

Verdict sjf_separation(const std::string& data) {
    const auto inst = io::parse_schedule_instance(sim::read_file(data + "/instances/separating.json"));
    const auto exact = inter::solve_exact(inst);
    const auto sjf = inter::solve_sjf(inst);
    const auto oracle = inter::brute_force_oracle(inst);
    inter::check_plan(inst, exact);
    inter::check_plan(inst, sjf);
    // Frozen after the oracle certified them.
    constexpr inter::Micros kOptimum = 7 * inter::kMicrosPerSecond;
    constexpr inter::Micros kSjf = 8 * inter::kMicrosPerSecond;
    const bool ok = oracle.makespan == kOptimum && exact.makespan == kOptimum && sjf.makespan == kSjf &&
                    exact.makespan < sjf.makespan;
    return {ok, fmt::format("oracle C_max {} s, exact {} s, SJF {} s (expected 7 < 8)", inter::to_seconds(oracle.makespan),
                            inter::to_seconds(exact.makespan), inter::to_seconds(sjf.makespan))};
}

// ---- 4: detector decision streams on bundled traces -------------------------

Verdict detector_conformance(const std::string& data) {
    early_exit::DetectorConfig cfg;
    cfg.alpha = 0.1;
    cfg.window = 2;
    cfg.patience_div = 2;
    cfg.patience_ovf = 2;
    cfg.tau_gap = 0.1;
    cfg.tau_slope = 0.001;
    cfg.warmup_ratio = 0.05;
    std::vector<std::string> notes;
    bool ok = true;
    for (const char* name : {"diverging", "overfitting", "counter_reset"}) {
        const auto rows = parse_trace_csv(sim::read_file(fmt::format("{}/traces/{}.csv", data, name)));
        const auto traj = ingest_trace(rows, cfg.alpha).trajectory;
        const auto got = io::decision_stream_csv(traj, cfg, traj.train.back().step);
        const auto want = sim::read_file(fmt::format("{}/traces/{}.expected.csv", data, name));
        const auto diff = test::compare_streams(got, want);
        const auto last = test::split_rows(got).back();
        notes.push_back(fmt::format("{}: {} at step {}{}", name, last.at(8), last.at(0),
                                    diff.empty() ? "" : " MISMATCH (" + diff + ")"));
        ok = ok && diff.empty();
    }
    std::string joined;
    for (const auto& n : notes) joined += (joined.empty() ? "" : "; ") + n;
    return {ok, joined};
}

// ---- 5: early-exit efficacy ----------------------------------------------------

struct SimSafety {
    std::size_t runs = 0;
    double worst_peak = 0.0;
    std::vector<std::string> failures;

    void record(const sim::SimReport& r) {
        ++runs;
        for (const auto& t : r.tasks) worst_peak = std::max(worst_peak, t.peak_memory_fraction);
    }
};

Verdict early_exit_efficacy(SimSafety& safety) {
    const auto t0 = Clock::now();
    const auto cluster = sim::single_gpu_cluster();
    constexpr int kSeeds = 100;
    int good = 0;
    double min_saved = 1.0, sum_saved = 0.0, min_planted = 1.0;
    std::vector<std::string> bad;
    for (int seed = 0; seed < kSeeds; ++seed) {
        const auto w = sim::early_exit_workload(0.75, 500);
        sim::SimReport r;
        try {
            r = sim::run(w, cluster, {true, false, true}, static_cast<std::uint64_t>(seed));
        } catch (const InvariantViolation& e) {
            safety.failures.push_back(fmt::format("early-exit seed {}: {}", seed, e.what()));
            bad.push_back(std::to_string(seed));
            continue;
        }
        safety.record(r);
        std::size_t redundant = 0;
        for (const auto& j : r.jobs) redundant += j.planted_kind != CurveKind::Converging;
        const double planted = static_cast<double>(redundant) / static_cast<double>(r.jobs.size());
        min_planted = std::min(min_planted, planted);
        const double saved = r.saved_fraction();
        min_saved = std::min(min_saved, saved);
        sum_saved += saved;
        const auto& task = r.tasks.at(0);
        const bool pass = r.jobs.size() == 165 && planted >= 0.70 && saved >= 0.70 &&
                          task.ground_truth_best_completed && std::abs(r.loss_ratio - 1.0) <= 0.01;
        if (pass) {
            ++good;
        } else {
            bad.push_back(std::to_string(seed));
        }
    }
    std::string bad_list;
    for (const auto& b : bad) bad_list += (bad_list.empty() ? "" : ",") + b;
    return {good >= 95,
            fmt::format("{}/{} seeds pass (need 95); 165 configs, planted redundancy >= {:.3f}; saved min {:.3f} mean "
                        "{:.3f}; {:.1f} s{}",
                        good, kSeeds, min_planted, min_saved, sum_saved / kSeeds, since(t0),
                        bad.empty() ? "" : "; failing seeds " + bad_list)};
}

// ---- 6: warmup selection arithmetic ---------------------------------------------

Verdict warmup_selection() {
    std::vector<early_exit::WarmupCandidate> sixty;
    Rng rng(derive_seed(2024, "acceptance/warmup"));
    for (int i = 0; i < 60; ++i) sixty.push_back({i, rng.uniform()});
    const auto kept60 = early_exit::warmup_select(sixty, 0.25).kept.size();
    int bad = 0;
    constexpr int kTrials = 2000;
    for (int trial = 0; trial < kTrials; ++trial) {
        const auto n = static_cast<std::size_t>(rng.uniform_int(1, 200));
        const double ratio = trial % 4 == 0 ? 0.25 : rng.uniform(0.001, 1.0);
        std::vector<early_exit::WarmupCandidate> c;
        for (std::size_t i = 0; i < n; ++i) {
            c.push_back({static_cast<int>(n - i) * 7, static_cast<double>(rng.uniform_int(0, 9)) / 8.0});
        }
        const auto got = early_exit::warmup_select(c, ratio);
        // Oracle: exact rational ceiling of ratio * n, then sort and slice.
        const double x = ratio * static_cast<double>(n);
        auto k = static_cast<std::size_t>(std::ceil(x));
        if (std::abs(x - std::round(x)) <= 1e-9 * std::max(1.0, x)) k = static_cast<std::size_t>(std::llround(x));
        auto sorted = c;
        std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
            return a.last_val < b.last_val || (a.last_val == b.last_val && a.job_id < b.job_id);
        });
        std::vector<int> want;
        for (std::size_t i = 0; i < k; ++i) want.push_back(sorted[i].job_id);
        if (got.kept != want || got.kept.size() + got.evicted.size() != n) ++bad;
    }
    return {kept60 == 15 && bad == 0,
            fmt::format("60 configs at 25% keep {} (expected 15); {} random trials, {} disagreements with sort-and-slice",
                        kept60, kTrials, bad)};
}

// ---- 7: grouped math ----------------------------------------------------------

Verdict grouped_math() {
    const auto t0 = Clock::now();
    Rng rng(derive_seed(2024, "acceptance/gemm"));
    constexpr int kSpecs = 200;
    double fwd = 0.0, grad = 0.0;
    int not_bitwise = 0;
    for (int s = 0; s < kSpecs; ++s) {
        // Ranks 16/32/64 in equal measure, random token counts per adapter.
        const auto per_rank = static_cast<std::size_t>(rng.uniform_int(1, 2));
        std::vector<std::size_t> ranks, tokens;
        for (std::size_t i = 0; i < per_rank; ++i) {
            for (std::size_t r : {16u, 32u, 64u}) {
                ranks.push_back(r);
                tokens.push_back(static_cast<std::size_t>(rng.uniform_int(1, 24)));
            }
        }
        const auto block = static_cast<std::size_t>(rng.uniform_int(1, 16));
        const auto rep = lora::check_random_spec(ranks, tokens, 64, 64, block, derive_seed(2024, "spec", s));
        fwd = std::max(fwd, rep.forward_max_rel);
        grad = std::max(grad, rep.grad_max_rel());
        not_bitwise += !rep.padded_bitwise_equal;
    }
    return {fwd <= 1e-12 && grad <= 1e-6 && not_bitwise == 0,
            fmt::format("{} specs (ranks 16/32/64, k = n = 64): forward max rel {:.3g} (tol 1e-12), gradient max rel {:.3g} "
                        "(tol 1e-6), {} padded/unpadded mismatches; {:.1f} s",
                        kSpecs, fwd, grad, not_bitwise, since(t0))};
}

// ---- 8: FLOP accounting --------------------------------------------------------

Verdict flop_accounting() {
    const std::vector<std::size_t> l = {4, 4}, r = {16, 32};
    const auto two = lora::flop_accounting(l, r, 64, 64);
    bool ok = two.useful_lora_flops == 49152 && two.wide_lora_flops == 98304 && two.waste_ratio == 2.0;
    std::string fails;
    for (std::size_t n = 1; n <= 16; ++n) {
        std::vector<std::size_t> ln(n, 8), rn(n, 32);
        if (lora::flop_accounting(ln, rn, 64, 128).waste_ratio != static_cast<double>(n)) {
            ok = false;
            fails += fmt::format(" N={}", n);
        }
    }
    return {ok, fmt::format("L=[4,4], r=[16,32]: useful {} wide {} waste {}; N identical adapters give N for N = 1..16{}",
                            two.useful_lora_flops, two.wide_lora_flops, two.waste_ratio,
                            fails.empty() ? "" : " (failed:" + fails + ")")};
}

// ---- 9: memory model ------------------------------------------------------------

Verdict memory_model(const SimSafety& safety) {
    Rng rng(derive_seed(2024, "acceptance/memory"));
    double worst_fit = 0.0;
    int bmax_wrong = 0;
    constexpr int kTrials = 500;
    for (int t = 0; t < kTrials; ++t) {
        const double k0 = rng.uniform(1e9, 40e9), k1 = rng.uniform(1e5, 5e6), cap = 80e9, margin = 0.9;
        const std::int64_t L = 256 << rng.uniform_int(0, 3);
        intra::MeasureFn measure = [&](std::int64_t B) { return k0 + k1 * static_cast<double>(B * L); };
        const auto bm = intra::find_bmax(measure, cap, margin);
        // Closed form, then nudged across any rounding at the boundary.
        auto want = static_cast<std::int64_t>(std::floor((margin * cap - k0) / (k1 * static_cast<double>(L))));
        while (measure(want + 1) <= margin * cap) ++want;
        while (want > 0 && measure(want) > margin * cap) --want;
        if (bm.b_max != want) ++bmax_wrong;
        const auto samples = intra::profile_grid(measure, bm.b_max);
        if (std::none_of(samples.begin(), samples.end(),
                         [&](const auto& s) { return s.total_batch() != samples.front().total_batch(); })) {
            continue;
        }
        const auto fit = intra::fit_memory_model(samples, L);
        worst_fit = std::max({worst_fit, std::abs(fit.k0 - k0) / k0, std::abs(fit.k1 - k1) / k1});
    }
    // Step-shaped analytic measure: B_max lands exactly on the step.
    for (std::int64_t step : {1, 7, 64, 1000, 123457}) {
        intra::MeasureFn m = [step](std::int64_t B) { return B <= step ? 50.0 : 200.0; };
        if (intra::find_bmax(m, 100.0, 0.9).b_max != step) ++bmax_wrong;
    }
    const bool safe = safety.failures.empty() && safety.worst_peak <= 1.0 + 1e-12 && safety.runs > 0;
    return {worst_fit <= 1e-9 && bmax_wrong == 0 && safe,
            fmt::format("fit max rel error {:.3g} (tol 1e-9) over {} planted models; {} wrong B_max; {} simulator runs "
                        "from criteria 5 and 10, {} safety violations, peak {:.4f} of the safe budget",
                        worst_fit, kTrials, bmax_wrong, safety.runs, safety.failures.size(), safety.worst_peak)};
}

// ---- 10: ablation structure ---------------------------------------------------------

Verdict ablation_structure(SimSafety& safety) {
    const auto t0 = Clock::now();
    const auto cluster = sim::eight_gpu_cluster();
    constexpr int kSeeds = 100;
    int chain_ok = 0, sched_ok = 0, ee_ok = 0;
    double sum_ratio = 0.0, min_ratio = 1e9, worst_chain = 1.0;
    std::vector<std::string> chain_bad;
    for (int seed = 0; seed < kSeeds; ++seed) {
        const auto w = sim::cluster_workload(static_cast<std::uint64_t>(seed));
        sim::AblationReport a;
        try {
            a = sim::ablate(w, cluster, static_cast<std::uint64_t>(seed));
        } catch (const InvariantViolation& e) {
            safety.failures.push_back(fmt::format("cluster seed {}: {}", seed, e.what()));
            chain_bad.push_back(fmt::format("{}(invariant)", seed));
            continue;
        }
        for (const auto* r : {&a.b, &a.b_s, &a.b_ee, &a.b_s_ee}) safety.record(*r);
        const double ratio = a.ratio_b_over_b_s_ee();
        sum_ratio += ratio;
        min_ratio = std::min(min_ratio, ratio);
        if (a.ee_chain_monotone()) {
            ++chain_ok;
        } else {
            worst_chain = std::max(worst_chain, a.b_s_ee.makespan / a.b_ee.makespan);
            chain_bad.push_back(std::to_string(seed));
        }
        sched_ok += a.scheduler_helps();
        ee_ok += a.ee_never_hurts();
        if ((seed + 1) % 20 == 0) progress(fmt::format("  ablation: {}/{} seeds, {:.0f} s", seed + 1, kSeeds, since(t0)));
    }
    const double secs = since(t0);
    const double mean = sum_ratio / kSeeds;
    std::string bad;
    for (const auto& b : chain_bad) bad += (bad.empty() ? "" : ",") + b;
    return {chain_ok == kSeeds && mean >= 3.0 && secs < 300.0,
            fmt::format("chain B+S+EE <= B+EE <= B holds on {}/{} seeds{}; mean B/(B+S+EE) {:.3f} (min {:.3f}, need "
                        ">= 3.0); B+S <= B on {}/{}; EE never hurts on {}/{}; {:.1f} s (limit 300 s)",
                        chain_ok, kSeeds,
                        bad.empty() ? ""
                                    : fmt::format(" (violations on seeds {}, worst (B+S+EE)/(B+EE) = {:.3f})", bad,
                                                  worst_chain),
                        mean, min_ratio, sched_ok, kSeeds, ee_ok, kSeeds, secs)};
}

// ---- 11: determinism of every CLI command ------------------------------------------

struct CliRun {
    int code = 0;
    std::string out;
    std::string err;
};

CliRun invoke(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::map<std::string, std::string> files_under(const fs::path& dir) {
    std::map<std::string, std::string> m;
    if (!fs::exists(dir)) return m;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file() || e.path().filename() == "manifest.json") continue;
        m[fs::relative(e.path(), dir).string()] = sim::read_file(e.path().string());
    }
    return m;
}

Verdict cli_determinism(const std::string& data) {
    const auto root = fs::temp_directory_path() / "lorasched_acceptance";
    fs::remove_all(root);
    fs::create_directories(root);
    const auto in = (root / "inputs").string();
    // Shared inputs, produced once.
    if (invoke({"suite", "--kind", "cluster", "--seed", "11", "--out", in}).code != 0) {
        return {false, "could not write suite inputs"};
    }
    const auto w = in + "/workload.json", c = in + "/cluster.json";
    // analyze-warmup reads every .csv in a directory; the bundled one also holds expected streams.
    const auto traces = root / "traces";
    fs::create_directories(traces);
    for (const char* name : {"diverging", "overfitting", "counter_reset"}) {
        fs::copy_file(fmt::format("{}/traces/{}.csv", data, name), traces / fmt::format("{}.csv", name));
    }

    struct Cmd {
        std::string name;
        std::vector<std::string> args;  // "{out}" is replaced by the per-run output directory
    };
    const std::vector<Cmd> cmds = {
        {"suite", {"suite", "--kind", "early-exit", "--seed", "3", "--out", "{out}"}},
        {"simulate", {"simulate", "--workload", w, "--cluster", c, "--seed", "7", "--out", "{out}"}},
        {"simulate --ablate", {"simulate", "--workload", w, "--cluster", c, "--seed", "7", "--ablate", "--out", "{out}"}},
        {"schedule exact",
         {"schedule", "--instance", data + "/instances/mixed6.json", "--method", "exact", "--out", "{out}/plan.csv"}},
        {"schedule sjf",
         {"schedule", "--instance", data + "/instances/pinned.json", "--method", "sjf", "--out", "{out}/plan.csv"}},
        {"schedule oracle",
         {"schedule", "--instance", data + "/instances/separating.json", "--method", "oracle", "--out", "{out}/plan.csv"}},
        {"detect", {"detect", "--trace", data + "/traces/overfitting.csv", "--out", "{out}/stream.csv"}},
        {"analyze-warmup", {"analyze-warmup", "--traces", traces.string(), "--out", "{out}/warmup.csv"}},
        {"gemm-check", {"gemm-check", "--specs", "5", "--seed", "4", "--json", "{out}/gemm.json"}},
    };
    std::vector<std::string> diffs;
    for (std::size_t i = 0; i < cmds.size(); ++i) {
        std::vector<CliRun> runs;
        std::vector<std::map<std::string, std::string>> outputs;
        for (int rep = 0; rep < 2; ++rep) {
            const auto dir = (root / fmt::format("cmd{}_{}", i, rep)).string();
            auto args = cmds[i].args;
            for (auto& a : args) {
                const auto pos = a.find("{out}");
                if (pos != std::string::npos) a.replace(pos, 5, dir);
            }
            runs.push_back(invoke(args));
            auto files = files_under(dir);
            // stdout may name the output directory; compare it with the path blanked.
            auto text = runs.back().out;
            for (auto pos = text.find(dir); pos != std::string::npos; pos = text.find(dir)) text.replace(pos, dir.size(), "{out}");
            runs.back().out = text;
            outputs.push_back(std::move(files));
        }
        if (runs[0].code != 0) diffs.push_back(fmt::format("{} exited {}: {}", cmds[i].name, runs[0].code, runs[0].err));
        if (runs[0].code != runs[1].code || runs[0].out != runs[1].out) diffs.push_back(cmds[i].name + " stdout");
        if (outputs[0] != outputs[1]) diffs.push_back(cmds[i].name + " files");
        if (outputs[0].empty()) diffs.push_back(cmds[i].name + " wrote nothing");
    }
    std::string joined;
    for (const auto& d : diffs) joined += (joined.empty() ? "" : "; ") + d;
    fs::remove_all(root);
    return {diffs.empty(), fmt::format("{} commands run twice; {}", cmds.size(),
                                       diffs.empty() ? "all outputs byte-identical (manifest excluded)" : joined)};
}

}  // namespace

int main(int argc, char** argv) {
    const std::string data = argc > 1 ? argv[1] : LORASCHED_DATA_DIR;
    std::map<int, std::pair<std::string, Verdict>> results;
    SimSafety safety;

    auto guarded = [&](int id, const std::string& title, auto&& fn) {
        progress(fmt::format("criterion {}: {} ...", id, title));
        Verdict v;
        try {
            v = fn();
        } catch (const std::exception& e) {
            v = {false, fmt::format("aborted: {}", e.what())};
        }
        results[id] = {title, v};
    };

    guarded(1, "scheduler exactness", [&] { return scheduler_exactness(); });
    guarded(2, "scheduler speed", [&] { return scheduler_speed(); });
    guarded(3, "SJF separation", [&] { return sjf_separation(data); });
    guarded(4, "detector conformance", [&] { return detector_conformance(data); });
    guarded(5, "early-exit efficacy", [&] { return early_exit_efficacy(safety); });
    guarded(6, "warmup selection", [&] { return warmup_selection(); });
    guarded(7, "grouped math", [&] { return grouped_math(); });
    guarded(8, "FLOP accounting", [&] { return flop_accounting(); });
    guarded(10, "ablation structure", [&] { return ablation_structure(safety); });
    guarded(9, "memory model", [&] { return memory_model(safety); });
    guarded(11, "CLI determinism", [&] { return cli_determinism(data); });

    int failed = 0;
    for (const auto& [id, r] : results) {
        const auto& [title, v] = r;
        std::cout << fmt::format("{} criterion {:>2} {}: {}", v.pass ? "PASS" : "FAIL", id, title, v.detail) << '\n';
        failed += !v.pass;
    }
    for (const auto& f : safety.failures) std::cout << "  safety: " << f << '\n';
    std::cout << fmt::format("{}/{} criteria passed\n", results.size() - static_cast<std::size_t>(failed), results.size());
    return failed == 0 ? 0 : 1;
}
