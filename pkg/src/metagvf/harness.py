"""Experiment harness: configs, seed sweeps, run records and summaries.

A run directory holds one ``seed_<k>.jsonl`` per seed (rows at the logging
cadence followed by one summary object) and an aggregate ``summary.json``.
"""
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .agents import Agent, AgentConfig
from .core import ConfigurationError, Rng
from .envs import make_env

log = logging.getLogger(__name__)

OUT_ENV_VAR = "METAGVF_OUT"


@dataclass
class ExperimentConfig:
    name: str
    env: dict
    agent: AgentConfig
    total_steps: int
    eval_steps: int = 1000
    # rewards averaged over the last eval_window steps (defaults to eval_steps)
    eval_window: int | None = None
    seeds: list = field(default_factory=lambda: list(range(10)))
    cadence: int = 1000
    success_threshold: float = 0.9
    success_metric: str = "mean_eval_reward"
    final_values: int = 10
    workers: int = 1
    # "auto" uses the compiled kernel where it applies, "python" never does
    engine: str = "auto"
    out_dir: str | None = None
    paper_scale: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.total_steps < 1:
            raise ConfigurationError("total_steps must be positive")
        if not 1 <= self.eval_steps <= self.total_steps:
            raise ConfigurationError("eval_steps must lie in [1, total_steps]")
        if self.eval_window is None:
            self.eval_window = self.eval_steps
        if not 0 < self.eval_window <= self.eval_steps:
            raise ConfigurationError("eval_window must lie in (0, eval_steps]")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ConfigurationError("seeds must be non-empty and distinct")
        if self.cadence < 1:
            raise ConfigurationError("cadence must be positive")
        if self.success_metric not in ("mean_eval_reward", "cumulative_eval_reward"):
            raise ConfigurationError(f"unknown success metric {self.success_metric!r}")
        if self.engine not in ("auto", "python"):
            raise ConfigurationError(f"unknown engine {self.engine!r}")
        if "id" not in self.env:
            raise ConfigurationError("env needs an id")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        try:
            agent = AgentConfig.from_dict(d.pop("agent", {}))
        except TypeError as e:
            raise ConfigurationError(str(e)) from None
        try:
            return cls(agent=agent, **d)
        except TypeError as e:
            raise ConfigurationError(str(e)) from None

    def to_dict(self):
        d = asdict(self)
        d["agent"]["hidden"] = list(self.agent.hidden)
        return d

    def scaled(self, paper_scale=False, num_seeds=None, total_steps=None):
        d = self.to_dict()
        if paper_scale:
            d.update(self.paper_scale)
        if num_seeds is not None:
            d["seeds"] = list(range(num_seeds))
        if total_steps is not None:
            d["total_steps"] = total_steps
        return ExperimentConfig.from_dict(d)


def preset_names():
    return sorted(p.name[:-5] for p in resources.files("metagvf.presets").iterdir()
                  if p.name.endswith(".yaml"))


def load_config(path_or_preset) -> ExperimentConfig:
    """Load a YAML config file, or a bundled preset by name."""
    path = Path(path_or_preset)
    if path.is_file():
        text = path.read_text()
    elif str(path_or_preset) in preset_names():
        text = resources.files("metagvf.presets").joinpath(f"{path_or_preset}.yaml").read_text()
    else:
        raise ConfigurationError(f"no config file or preset named {path_or_preset!r}")
    data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ConfigurationError("config must be a mapping")
    return ExperimentConfig.from_dict(data)


def default_out_dir():
    return Path(os.environ.get(OUT_ENV_VAR, "runs"))


# --------------------------------------------------------------------------
# single seed
# --------------------------------------------------------------------------

def _floats(x):
    return [float(v) for v in np.ravel(x)]


def epsilon_schedule(cfg: ExperimentConfig):
    """Per-step exploration: the agent's schedule, then ``eval_epsilon`` for evaluation."""
    a = cfg.agent
    t = np.arange(cfg.total_steps, dtype=np.float64)
    eps = np.full(cfg.total_steps, a.epsilon)
    if a.epsilon_start is not None and a.epsilon_decay_steps > 0:
        early = t < a.epsilon_decay_steps
        eps[early] = a.epsilon_start + (t[early] / a.epsilon_decay_steps) * (a.epsilon - a.epsilon_start)
    eps[cfg.total_steps - cfg.eval_steps:] = a.eval_epsilon
    return eps


class StepFailure(Exception):
    def __init__(self, step, cause):
        super().__init__(f"step {step}: {type(cause).__name__}: {cause}")


def python_steps(agent: Agent, env, eps, omega_sum, start=0):
    """Reference loop behind :func:`metagvf.kernels.run_steps` (same outputs)."""
    n = len(eps)
    r = np.zeros(n)
    acts = np.zeros(n, dtype=np.int64)
    d = np.zeros(n)
    v = np.zeros((n, len(agent.v)))
    for k in range(n):
        try:
            step = agent.step(env, float(eps[k]))
        except Exception as e:
            raise StepFailure(start + k, e) from e
        r[k], acts[k], d[k], v[k] = step.reward, step.action, step.delta, step.v
        for acc, w in zip(omega_sum, agent.omega_c()):
            acc += w
    return r, acts, d, v


def run_seed(cfg: ExperimentConfig, seed: int, path: Path | None = None):
    """Run one seed; returns ``(rows, summary)`` and writes the record if ``path``.

    Linear Monsoon agents run through the compiled kernel unless
    ``engine`` is ``"python"``.
    """
    env_params = {k: v for k, v in cfg.env.items() if k != "id"}
    env = make_env(cfg.env["id"], **env_params)
    rows = []
    summary = {"type": "summary", "name": cfg.name, "env": cfg.env["id"], "seed": seed,
               "status": "ok"}
    rewards = np.zeros(cfg.total_steps)
    last_v = []
    t = 0
    try:
        agent = Agent(cfg.agent, cfg.env["id"], env, Rng(seed))
        agent.start(env.reset())
        omega_sum = [np.zeros_like(w) for w in agent.omega_c()]
        stepper = python_steps
        if cfg.engine == "auto":
            from . import kernels
            if kernels.eligible(agent, env):
                stepper = _kernel_steps
        eps = epsilon_schedule(cfg)
        cum = 0.0
        first_kept = cfg.total_steps - cfg.final_values
        while t < cfg.total_steps:
            stop = min((t // cfg.cadence + 1) * cfg.cadence, cfg.total_steps)
            r, acts, d, v = stepper(agent, env, eps[t:stop], omega_sum, t)
            rewards[t:stop] = r
            for k in range(max(first_kept, t), stop):
                last_v.append(_floats(v[k - t]))
            cum += float(r.sum())
            t = stop
            if t % cfg.cadence == 0:
                row = {"step": t, "reward": float(r[-1]), "cum_reward": cum,
                       "action": int(acts[-1]), "delta": float(d[-1]), "v": _floats(v[-1])}
                if omega_sum:
                    row["omega_c"] = [_floats(w) for w in agent.omega_c()]
                    row["omega_pi"] = [_floats(w) for w in agent.omega_pi()]
                rows.append(row)
        eval_start = cfg.total_steps - cfg.eval_steps
        window = rewards[cfg.total_steps - cfg.eval_window:]
        summary.update({
            "total_steps": cfg.total_steps,
            "eval_steps": cfg.eval_steps,
            "mean_eval_reward": float(window.mean()),
            "cumulative_eval_reward": float(rewards[eval_start:].sum()),
            "total_reward": float(rewards.sum()),
            "final_values": last_v,
            "omega_c_mean": [_floats(w / cfg.total_steps) for w in omega_sum],
            "omega_c_final": [_floats(w) for w in agent.omega_c()],
            "omega_pi_final": [_floats(w) for w in agent.omega_pi()],
            "meta_skipped": agent.meta_skipped,
        })
        summary["success"] = bool(summary[cfg.success_metric] >= cfg.success_threshold)
    except Exception as e:  # recorded, the sweep carries on
        summary["status"] = "error"
        summary["error"] = str(e) if isinstance(e, StepFailure) else f"step {t}: {type(e).__name__}: {e}"
        summary["success"] = False
    if path is not None:
        write_record(path, rows, summary)
    return rows, summary


def _kernel_steps(agent, env, eps, omega_sum, start=0):
    from .kernels import run_steps
    try:
        return run_steps(agent, env, eps, omega_sum)
    except Exception as e:
        raise StepFailure(start + getattr(e, "step", 0), e) from e


def write_record(path: Path, rows, summary):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for row in rows:
            f.write(json.dumps(row, allow_nan=False) + "\n")
        f.write(json.dumps(summary) + "\n")


def read_record(path: Path):
    rows, summary = [], None
    with open(path) as f:
        for line in f:
            obj = json.loads(line)
            if obj.get("type") == "summary":
                summary = obj
            else:
                rows.append(obj)
    return rows, summary


# --------------------------------------------------------------------------
# sweeps and aggregation
# --------------------------------------------------------------------------

def mean_sem(xs):
    xs = np.asarray(xs, dtype=np.float64)
    if xs.size == 0:
        return math.nan, math.nan
    if xs.size == 1:
        return float(xs[0]), 0.0
    return float(xs.mean()), float(xs.std(ddof=1) / math.sqrt(xs.size))


def success_rate(summaries, threshold=0.9, metric="mean_eval_reward"):
    """Fraction of seeds whose metric reaches ``threshold`` (failed seeds count as misses)."""
    if not summaries:
        return math.nan
    hits = sum(1 for s in summaries
               if s.get("status") == "ok" and s[metric] >= threshold)
    return hits / len(summaries)


def aggregate_summaries(summaries, threshold=0.9, metric="mean_eval_reward"):
    ok = [s for s in summaries if s.get("status") == "ok"]
    m, sem = mean_sem([s["mean_eval_reward"] for s in ok])
    cm, csem = mean_sem([s["cumulative_eval_reward"] for s in ok])
    return {
        "name": summaries[0]["name"] if summaries else None,
        "seeds": [s["seed"] for s in summaries],
        "failed_seeds": [s["seed"] for s in summaries if s.get("status") != "ok"],
        "mean_eval_reward": m,
        "mean_eval_reward_sem": sem,
        "cumulative_eval_reward": cm,
        "cumulative_eval_reward_sem": csem,
        "success_threshold": threshold,
        "success_metric": metric,
        "success_rate": success_rate(summaries, threshold, metric),
    }


def _run_one(args):
    cfg_dict, seed, path = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    t0 = time.perf_counter()
    _, summary = run_seed(cfg, seed, Path(path))
    return summary, time.perf_counter() - t0


def run_experiment(cfg: ExperimentConfig, out_dir=None):
    """Run every seed and write per-seed records plus ``summary.json``.

    Returns the aggregate summary (also carrying the per-seed summaries).
    """
    out = Path(out_dir or cfg.out_dir or default_out_dir()) / cfg.name
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
    jobs = [(cfg.to_dict(), seed, str(out / f"seed_{seed}.jsonl")) for seed in cfg.seeds]
    t0 = time.perf_counter()
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    summaries = []
    for summary, seconds in results:
        summaries.append(summary)
        if summary["status"] != "ok":
            log.warning("%s seed %s aborted: %s", cfg.name, summary["seed"], summary["error"])
        else:
            log.info("%s seed %s: mean eval reward %.3f, cumulative %.1f (%.1fs)",
                     cfg.name, summary["seed"], summary["mean_eval_reward"],
                     summary["cumulative_eval_reward"], seconds)
    agg = aggregate_summaries(summaries, cfg.success_threshold, cfg.success_metric)
    (out / "summary.json").write_text(json.dumps(agg, indent=2, sort_keys=True) + "\n")
    agg["runs"] = summaries
    agg["runtime_s"] = time.perf_counter() - t0
    agg["seed_seconds"] = [s for _, s in results]
    agg["out_dir"] = str(out)
    return agg


def load_run_dir(run_dir):
    """Per-seed ``(rows, summary)`` pairs of one run directory, sorted by seed."""
    records = []
    for p in Path(run_dir).glob("seed_*.jsonl"):
        records.append(read_record(p))
    records.sort(key=lambda r: r[1]["seed"] if r[1] else -1)
    return records


def find_run_dirs(root):
    root = Path(root)
    if any(root.glob("seed_*.jsonl")):
        return [root]
    return sorted({p.parent for p in root.glob("*/seed_*.jsonl")})
