#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Independent reference for the loss-pattern detector.

Generates the bundled traces in data/traces and the expected decision streams
next to them. Written from the algorithm description alone; shares no code with
the C++ implementation. Parameters: alpha=0.1, w=2, p_div=p_ovf=2,
tau_slope=0.001, tau_gap=0.1, warmup_ratio=0.05.
"""
import math
import sys
from pathlib import Path

ALPHA, W, P_DIV, P_OVF, TAU_SLOPE, TAU_GAP, WARMUP = 0.1, 2, 2, 2, 0.001, 0.1, 0.05
EVAL = 10


def slope(ys):
    n = len(ys)
    xbar = (n - 1) / 2
    ybar = sum(ys) / n
    num = sum((i - xbar) * (y - ybar) for i, y in enumerate(ys))
    den = sum((i - xbar) ** 2 for i in range(n))
    return num / den


def decide(rows, total):
    """rows: list of (step, train, val or None). Returns list of stream rows."""
    boundary = math.ceil(WARMUP * total)
    ema = None
    ema_hist, val_hist = [], []
    cnt_div = cnt_ovf = 0
    out = []
    for step, train, val in rows:
        ema = train if ema is None else ALPHA * train + (1 - ALPHA) * ema
        if val is None:
            continue
        ema_hist.append(ema)
        val_hist.append((step, val))
        s_tr = s_va = gap = None
        decision, ckpt = "continue", None
        if len(ema_hist) >= W:
            s_tr = slope(ema_hist[-W:])
            s_va = slope([v for _, v in val_hist[-W:]])
            cnt_div = cnt_div + 1 if (s_tr >= TAU_SLOPE and s_va >= TAU_SLOPE) else 0
            if cnt_div >= P_DIV:
                decision = "exit_diverging"
        if decision == "continue" and step > boundary:
            gap = (val - ema) / ema
            cnt_ovf = cnt_ovf + 1 if gap > TAU_GAP else 0
            if cnt_ovf >= P_OVF:
                decision = "exit_overfitting"
                best = min(val_hist, key=lambda sv: sv[1])  # min keeps the earliest on ties
                ckpt = best[0]
        out.append((step, ema, val, s_tr, s_va, gap, cnt_div, cnt_ovf, decision, ckpt))
        if decision != "continue":
            break
    return out


def diverging(total=200):
    rows = []
    for s in range(1, total + 1):
        tr = 2.0 - 0.004 * s if s <= 60 else 1.76 + 0.012 * (s - 60)
        va = tr + 0.02 if s % EVAL == 0 else None
        rows.append((s, tr, va))
    return rows


def overfitting(total=200):
    rows = []
    for s in range(1, total + 1):
        tr = 0.4 + 1.6 * math.exp(-s / 30.0)
        va = None
        if s % EVAL == 0:
            va = 0.42 + 1.5 * math.exp(-s / 30.0) + (0.003 * (s - 90) if s > 90 else 0.0)
        rows.append((s, tr, va))
    return rows


def counter_reset(total=200):
    # Train rises steadily; val zig-zags so the divergence counter keeps restarting
    # until two rising evaluations line up at step 160.
    zig = {10: 1.00, 20: 1.01, 30: 1.00, 40: 1.01, 50: 1.00, 60: 1.01, 70: 1.00, 80: 1.01,
           90: 1.00, 100: 1.01, 110: 1.00, 120: 1.01, 130: 1.00, 140: 1.01, 150: 1.02, 160: 1.03,
           170: 1.04, 180: 1.05, 190: 1.06, 200: 1.07}
    rows = []
    for s in range(1, total + 1):
        tr = 0.9 + 0.0005 * s
        rows.append((s, tr, zig.get(s)))
    return rows


def fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "%.17g" % v
    return str(v)


def main(out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, gen in (("diverging", diverging), ("overfitting", overfitting), ("counter_reset", counter_reset)):
        rows = gen()
        with open(out / f"{name}.csv", "w") as f:
            f.write("step,train_loss,val_loss\n")
            for s, tr, va in rows:
                f.write(f"{s},{fmt(tr)},{fmt(va)}\n")
        # Re-read what was written so the stream sees exactly the serialised values.
        parsed = []
        for line in (out / f"{name}.csv").read_text().splitlines()[1:]:
            s, tr, va = line.split(",")
            parsed.append((int(s), float(tr), float(va) if va else None))
        stream = decide(parsed, total=parsed[-1][0])
        with open(out / f"{name}.expected.csv", "w") as f:
            f.write("step,ema_train,val,slope_train,slope_val,gap,cnt_div,cnt_ovf,decision,checkpoint_step\n")
            for r in stream:
                f.write(",".join(fmt(x) for x in r) + "\n")
        last = stream[-1]
        print(f"{name}: {len(stream)} evals, final {last[8]} at step {last[0]} ckpt {last[9]}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "data/traces")
