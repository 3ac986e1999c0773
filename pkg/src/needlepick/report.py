"""Run reporting: tables, smoothed curves, and a machine-readable summary.

Curves are smoothed with an exponential moving window at factors 0.7
(performance) and 0.3 (robustness-style comparisons).  The summary's
success rate is recomputed from the raw per-episode logs, so it cross
checks the per-evaluation counters.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

SMOOTH_PERFORMANCE = 0.7
SMOOTH_COMPARISON = 0.3


def ema(values, factor: float) -> np.ndarray:
    """Exponential moving window: s_0 = x_0, s_t = f*s_{t-1} + (1-f)*x_t."""
    if not 0.0 <= factor < 1.0:
        raise ValueError(f"smoothing factor must be in [0,1), got {factor}")
    values = np.asarray(values, dtype=np.float64)
    out = np.empty_like(values)
    if len(values) == 0:
        return out
    out[0] = values[0]
    for t in range(1, len(values)):
        out[t] = factor * out[t - 1] + (1.0 - factor) * values[t]
    return out


def load_run(run_dir) -> dict:
    run_dir = Path(run_dir)
    evals = []
    eval_path = run_dir / "eval_records.json"
    if eval_path.exists():
        evals = json.loads(eval_path.read_text())
    metrics = []
    metrics_path = run_dir / "metrics.ndjson"
    if metrics_path.exists():
        with metrics_path.open() as f:
            metrics = [json.loads(line) for line in f if line.strip()]
    return {"evals": evals, "metrics": metrics}


def _write_success_table(path: Path, evals: list, ema07, ema03):
    header = "step\tsuccess_rate\tsuccesses\tvalid\texcluded\tema_0.7\tema_0.3"
    rows = [header]
    for i, rec in enumerate(evals):
        rows.append(
            f"{rec['step']}\t{rec['success_rate']:.4f}\t{rec['successes']}"
            f"\t{rec['valid']}\t{rec['excluded']}\t{ema07[i]:.4f}\t{ema03[i]:.4f}"
        )
    path.write_text("\n".join(rows) + "\n")


def _plot_success(path: Path, evals: list, ema07, ema03):
    steps = [rec["step"] for rec in evals]
    rates = [rec["success_rate"] for rec in evals]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(steps, rates, color="0.75", lw=1, label="raw")
    ax.plot(steps, ema07, color="tab:blue", lw=2, label="smoothed (0.7)")
    ax.plot(steps, ema03, color="tab:orange", lw=1.5, label="smoothed (0.3)")
    ax.set_xlabel("environment steps")
    ax.set_ylabel("evaluation success rate")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(loc="lower right")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _plot_losses(path: Path, metrics: list) -> bool:
    train_rows = [m for m in metrics if m.get("phase") == "train"]
    if not train_rows:
        return False
    series = {}
    for key in ("policy/model_total", "demo/model_total", "policy/actor",
                "policy/critic", "bc"):
        points = [(m["step"], m[key]) for m in train_rows if key in m]
        if points:
            series[key] = points
    if not series:
        return False
    fig, axes = plt.subplots(1, 2, figsize=(11, 4))
    for key, points in series.items():
        xs, ys = zip(*points)
        target = axes[0] if key.endswith("model_total") else axes[1]
        target.plot(xs, ys, label=key)
    axes[0].set_title("world-model loss")
    axes[1].set_title("behavior losses")
    for ax in axes:
        ax.set_xlabel("environment steps")
        ax.legend(fontsize=8)
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return True


def recount_from_episodes(evals: list) -> dict:
    """Re-derive overall success from raw episode logs (cross-check)."""
    successes = valid = excluded = 0
    for rec in evals:
        for ep in rec.get("episodes", []):
            if ep["excluded"]:
                excluded += 1
            else:
                valid += 1
                successes += int(ep["success"])
    rate = successes / valid if valid else 0.0
    return {"successes": successes, "valid": valid, "excluded": excluded, "rate": rate}


def report(run_dir, out_dir=None) -> dict:
    """Render tables, figures, and summary.json for one training run."""
    run_dir = Path(run_dir)
    out = Path(out_dir) if out_dir else run_dir / "report"
    out.mkdir(parents=True, exist_ok=True)
    data = load_run(run_dir)
    evals = data["evals"]
    artifacts = {"out_dir": str(out)}

    rates = [rec["success_rate"] for rec in evals]
    ema07 = ema(rates, SMOOTH_PERFORMANCE)
    ema03 = ema(rates, SMOOTH_COMPARISON)
    table = out / "success_table.tsv"
    _write_success_table(table, evals, ema07, ema03)
    artifacts["success_table"] = str(table)
    if evals:
        curve = out / "success_curve.png"
        _plot_success(curve, evals, ema07, ema03)
        artifacts["success_curve"] = str(curve)
    if _plot_losses(out / "losses.png", data["metrics"]):
        artifacts["losses"] = str(out / "losses.png")

    recount = recount_from_episodes(evals)
    summary = {
        "evaluations": len(evals),
        "final_success_rate": rates[-1] if rates else None,
        "best_success_rate": max(rates) if rates else None,
        "final_success_rate_smoothed": float(ema07[-1]) if len(ema07) else None,
        "recount": recount,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    artifacts["summary"] = str(out / "summary.json")
    return artifacts
