// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include <fmt/format.h>

#include "lorasched/early_exit.hpp"
#include "lorasched/errors.hpp"
#include "lorasched/workload.hpp"

namespace lorasched {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        cells.push_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return cells;
}

double parse_loss(std::string_view cell, std::size_t line_no, std::string_view column) {
    // from_chars rejects "inf"/"nan" spellings inconsistently; handle them explicitly.
    std::string lowered(cell);
    std::transform(lowered.begin(), lowered.end(), lowered.begin(), [](unsigned char c) { return std::tolower(c); });
    if (lowered == "inf" || lowered == "+inf" || lowered == "-inf" || lowered == "infinity" || lowered == "nan") {
        throw InputError(fmt::format("line {}: non-finite {} '{}'", line_no, column, cell));
    }
    double v = 0.0;
    const auto* first = cell.data();
    const auto* last = cell.data() + cell.size();
    if (!cell.empty() && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last) {
        throw InputError(fmt::format("line {}: cannot parse {} '{}'", line_no, column, cell));
    }
    return v;
}

}  // namespace

std::vector<TraceRow> parse_trace_csv(std::string_view text) {
    std::vector<TraceRow> rows;
    std::size_t line_no = 0;
    bool header_seen = false;
    bool has_val = false;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        auto line = trim(text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos));
        pos = nl == std::string_view::npos ? text.size() : nl + 1;
        ++line_no;
        if (line.empty()) continue;

        auto cells = split_csv(line);
        if (!header_seen) {
            require_input(cells.size() >= 2 && cells[0] == "step" && cells[1] == "train_loss" &&
                              (cells.size() == 2 || (cells.size() == 3 && cells[2] == "val_loss")),
                          fmt::format("line {}: expected header 'step,train_loss[,val_loss]'", line_no));
            has_val = cells.size() == 3;
            header_seen = true;
            continue;
        }
        require_input(cells.size() == (has_val ? 3u : 2u) || (has_val && cells.size() == 2),
                      fmt::format("line {}: wrong number of columns", line_no));

        TraceRow row;
        std::int64_t step = 0;
        auto [ptr, ec] = std::from_chars(cells[0].data(), cells[0].data() + cells[0].size(), step);
        require_input(ec == std::errc{} && ptr == cells[0].data() + cells[0].size(),
                      fmt::format("line {}: step '{}' is not an integer", line_no, cells[0]));
        row.step = step;
        row.train_loss = parse_loss(cells[1], line_no, "train_loss");
        if (cells.size() == 3 && !cells[2].empty()) row.val_loss = parse_loss(cells[2], line_no, "val_loss");
        rows.push_back(row);
    }
    return rows;
}

IngestResult ingest_trace(std::vector<TraceRow> rows, double ema_alpha) {
    IngestResult out;
    for (const auto& r : rows) {
        require_input(std::isfinite(r.train_loss) && r.train_loss >= 0.0,
                      fmt::format("step {}: train_loss {} must be finite and >= 0", r.step, r.train_loss));
        if (r.val_loss) {
            require_input(std::isfinite(*r.val_loss) && *r.val_loss >= 0.0,
                          fmt::format("step {}: val_loss {} must be finite and >= 0", r.step, *r.val_loss));
        }
    }
    const bool sorted = std::is_sorted(rows.begin(), rows.end(),
                                       [](const TraceRow& a, const TraceRow& b) { return a.step < b.step; });
    if (!sorted) {
        std::stable_sort(rows.begin(), rows.end(), [](const TraceRow& a, const TraceRow& b) { return a.step < b.step; });
        out.resorted = true;
    }
    for (std::size_t i = 1; i < rows.size(); ++i) {
        require_input(rows[i].step != rows[i - 1].step, fmt::format("duplicate step {}", rows[i].step));
    }

    std::optional<double> ema;
    auto& traj = out.trajectory;
    traj.train.reserve(rows.size());
    traj.train_ema.reserve(rows.size());
    for (const auto& r : rows) {
        ema = early_exit::ema_update(ema, r.train_loss, ema_alpha);
        traj.train.push_back({r.step, r.train_loss});
        traj.train_ema.push_back({r.step, *ema});
        if (r.val_loss) traj.val.push_back({r.step, *r.val_loss});
    }
    return out;
}

std::string serialize_trace_csv(const LossTrajectory& traj) {
    std::string out = "step,train_loss,val_loss\n";
    std::size_t vi = 0;
    for (const auto& p : traj.train) {
        while (vi < traj.val.size() && traj.val[vi].step < p.step) ++vi;
        if (vi < traj.val.size() && traj.val[vi].step == p.step) {
            out += fmt::format("{},{:.17g},{:.17g}\n", p.step, p.loss, traj.val[vi].loss);
        } else {
            out += fmt::format("{},{:.17g},\n", p.step, p.loss);
        }
    }
    return out;
}

}  // namespace lorasched
