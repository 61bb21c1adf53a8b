"""Static figures from run records.

Every figure is written as SVG with a fixed hash salt and no date stamp so
identical records give byte-identical files. Series that are missing from
the records are skipped with a warning rather than drawn empty.
"""
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .harness import find_run_dirs, load_run_dir, mean_sem  # noqa: E402

log = logging.getLogger(__name__)

plt.rcParams["svg.hashsalt"] = "metagvf"
plt.rcParams["svg.fonttype"] = "path"

FROST_INPUTS = ["p0", "p1", "p2", "p3", "p4", "p5", "p6", "hazard", "heat"]


def _save(fig, path):
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def _ok(summaries):
    return [s for s in summaries if s and s.get("status") == "ok"]


def reward_bars(groups, path, metric="mean_eval_reward", ylabel="mean eval reward"):
    """Bar per run (mean over seeds) with SEM error bars."""
    names, means, sems = [], [], []
    for name, summaries in groups.items():
        vals = [s[metric] for s in _ok(summaries)]
        if not vals:
            continue
        m, e = mean_sem(vals)
        names.append(name)
        means.append(m)
        sems.append(e)
    if not names:
        log.warning("no finished seeds for %s; skipping %s", metric, path.name)
        return None
    fig, ax = plt.subplots(figsize=(max(3.0, 1.2 * len(names)), 3.2))
    x = np.arange(len(names))
    ax.bar(x, means, yerr=sems, capsize=4, color="0.6", edgecolor="k")
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    return _save(fig, path)


def meta_weight_panels(summaries, path, key="omega_c_final", labels=None, title=None):
    """One panel per GVF: final meta-weights of every seed, failures drawn apart."""
    ok = [s for s in _ok(summaries) if s.get(key)]
    if not ok:
        log.warning("no %s in records; skipping %s", key, path.name)
        return None
    n_gvf = len(ok[0][key])
    fig, axes = plt.subplots(1, n_gvf, figsize=(3.2 * n_gvf, 3.0), squeeze=False)
    for i, ax in enumerate(axes[0]):
        for s in ok:
            w = np.asarray(s[key][i])
            style = dict(color="k", alpha=0.4) if s.get("success") else dict(color="r", ls="--")
            ax.plot(np.arange(w.size), w, marker="o", **style)
        n = len(ok[0][key][i])
        ax.set_xticks(np.arange(n))
        if labels is not None and len(labels) == n:
            ax.set_xticklabels(labels, fontsize=8)
        ax.axhline(0.0, color="0.8", lw=0.8)
        ax.set_title(f"GVF {i}", fontsize=9)
    if title:
        fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    return _save(fig, path)


def final_values_panel(summaries, path):
    """Scatter of the two predictions over each seed's final steps."""
    ok = [s for s in _ok(summaries) if s.get("final_values") and len(s["final_values"][0]) >= 2]
    if not ok:
        log.warning("no two-prediction values in records; skipping %s", path.name)
        return None
    fig, ax = plt.subplots(figsize=(3.4, 3.2))
    for s in ok:
        v = np.asarray(s["final_values"])
        style = dict(color="k", alpha=0.5) if s.get("success") else dict(color="r", marker="x")
        ax.scatter(v[:, 0], v[:, 1], s=12, **style)
    ax.set_xlabel("v0")
    ax.set_ylabel("v1")
    fig.tight_layout()
    return _save(fig, path)


def cumulative_reward_curves(groups, path):
    """Mean cumulative reward over training, shaded by SEM, one line per run."""
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    drawn = 0
    for name, records in groups.items():
        curves = [np.array([(r["step"], r["cum_reward"]) for r in rows])
                  for rows, s in records if rows and s and s.get("status") == "ok"]
        if not curves:
            continue
        n = min(len(c) for c in curves)
        steps = curves[0][:n, 0]
        ys = np.stack([c[:n, 1] for c in curves])
        m = ys.mean(axis=0)
        e = ys.std(axis=0, ddof=1) / np.sqrt(len(ys)) if len(ys) > 1 else np.zeros_like(m)
        ax.plot(steps, m, label=name)
        ax.fill_between(steps, m - e, m + e, alpha=0.25)
        drawn += 1
    if not drawn:
        plt.close(fig)
        log.warning("no cumulative reward series; skipping %s", path.name)
        return None
    ax.set_xlabel("step")
    ax.set_ylabel("cumulative reward")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def cumulant_weight_bars(summaries, path, highlight=8, labels=FROST_INPUTS):
    """Run-averaged |omega_c| per input over successful seeds (all seeds if none)."""
    ok = [s for s in _ok(summaries) if s.get("omega_c_mean")]
    chosen = [s for s in ok if s.get("success")] or ok
    if not chosen:
        log.warning("no cumulant weights in records; skipping %s", path.name)
        return None
    w = np.mean([np.abs(np.asarray(s["omega_c_mean"][0])) for s in chosen], axis=0)
    fig, ax = plt.subplots(figsize=(4.5, 3.0))
    colors = ["0.6"] * w.size
    if 0 <= highlight < w.size:
        colors[highlight] = "tab:red"
    ax.bar(np.arange(w.size), w, color=colors, edgecolor="k")
    ax.set_xticks(np.arange(w.size))
    if len(labels) == w.size:
        ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylabel("mean |cumulant weight|")
    fig.tight_layout()
    return _save(fig, path)


def emit_plots(root, out_dir=None):
    """Render every figure the records under ``root`` support; returns written paths."""
    root = Path(root)
    out = Path(out_dir) if out_dir else root / "figures"
    run_dirs = find_run_dirs(root)
    if not run_dirs:
        log.warning("no run records under %s; nothing to plot", root)
        return []
    runs = {d.name: load_run_dir(d) for d in run_dirs}
    env_of = {name: (recs[0][1] or {}).get("env") for name, recs in runs.items()}
    monsoon = {n: r for n, r in runs.items() if env_of[n] == "monsoon"}
    frost = {n: r for n, r in runs.items() if env_of[n] == "frosthollow"}
    written = []

    def add(p):
        if p is not None:
            written.append(p)

    if monsoon:
        add(reward_bars({n: [s for _, s in r] for n, r in monsoon.items()},
                        out / "monsoon_rewards.svg"))
    for name, recs in sorted(monsoon.items()):
        summaries = [s for _, s in recs]
        add(meta_weight_panels(summaries, out / f"{name}_cumulant_weights.svg",
                               "omega_c_final", ["growth", "bias"]))
        add(meta_weight_panels(summaries, out / f"{name}_policy_weights.svg",
                               "omega_pi_final", ["no-water", "water"]))
        add(final_values_panel(summaries, out / f"{name}_values.svg"))
    if frost:
        add(reward_bars({n: [s for _, s in r] for n, r in frost.items()},
                        out / "frosthollow_rewards.svg", "cumulative_eval_reward",
                        "cumulative eval reward"))
        add(cumulative_reward_curves(frost, out / "frosthollow_cumulative.svg"))
    for name, recs in sorted(frost.items()):
        add(cumulant_weight_bars([s for _, s in recs], out / f"{name}_cumulant_inputs.svg"))
    return written


def write_csv(root, path=None):
    """One CSV line per seed summary under ``root``."""
    import csv
    root = Path(root)
    path = Path(path) if path else root / "summaries.csv"
    cols = ["run", "seed", "status", "mean_eval_reward", "cumulative_eval_reward", "success"]
    rows = []
    for d in find_run_dirs(root):
        for _, s in load_run_dir(d):
            if s:
                rows.append([d.name] + [s.get(c) for c in cols[1:]])
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(cols)
        w.writerows(rows)
    return path
