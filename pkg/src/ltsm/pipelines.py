"""Reproducible figure pipelines tying the library together, plus the run
manifest. Each pipeline writes CSV (and SVG) artifacts under an output
directory and returns the artifact paths; everything is deterministic given
the configured seeds."""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import metrics, nn, sampler, simulators, svgplot, targets, training
from .sde import T_MIN, NoiseSchedule
from .serialize import dumps17, write_csv
from .simulators import GALTON, GAUSSIAN, MIXTURE

DEFAULT_OBSERVATIONS = {
    GAUSSIAN: [-3.0, -1.0, 0.0, 1.0, 3.0],
    MIXTURE: [0.0, 2.0, 4.0, 6.0, 8.0],
    GALTON: [6.0, 8.0, 10.0, 12.0, 14.0],
}

DEFAULT_BUDGETS = [1_000, 3_000, 10_000, 30_000]
MMD_SAMPLE_SIZE = 2_000
PILOT_SIZE = 2_000
REVERSE_STEPS = 500


def derive_seed(*parts) -> int:
    """Stable 63-bit stream seed from labeled parts (counter-based seeding)."""
    digest = hashlib.sha256("/".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def default_t_grid(n: int = 20, t_lo: float = 0.01) -> np.ndarray:
    """Log-spaced grid that resolves the small-t blow-up; always contains 0.5."""
    return np.unique(np.concatenate([np.geomspace(t_lo, 1.0, n), [0.5]]))


def record_manifest(out_dir, command: str, config: dict, seeds, artifacts) -> Path:
    """Append one entry to <out_dir>/manifest.json and return its path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "manifest.json"
    entries = json.loads(path.read_text()) if path.exists() else []
    canonical = dumps17(config)
    entries.append(
        {
            "command": command,
            "config": json.loads(canonical),
            "config_sha256": hashlib.sha256(canonical.encode()).hexdigest(),
            "seeds": [int(s) for s in np.atleast_1d(seeds)],
            "artifacts": [str(a) for a in artifacts],
            "written_at": datetime.now(timezone.utc).isoformat(),
        }
    )
    path.write_text(json.dumps(entries, indent=2) + "\n")
    return path


# ---------------------------------------------------------------------------
# variance figure


def variance_figure(
    task: str,
    out_dir,
    x=None,
    n: int = 100_000,
    seed: int = 0,
    t_grid=None,
    sched: NoiseSchedule | None = None,
    sim_params: dict | None = None,
):
    """Variance-vs-time profile CSV + log-y SVG for one task."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = simulators.make_simulator(task, **(sim_params or {}))
    sched = sched or NoiseSchedule()
    grid = default_t_grid() if t_grid is None else np.asarray(t_grid, dtype=float)
    profile = metrics.variance_profile(spec, x, grid, n, sched, seed)
    csv_path = out_dir / f"variance_{task}.csv"
    profile.to_csv(csv_path)
    svg_path = out_dir / f"variance_{task}.svg"
    svgplot.write_svg_plot(
        csv_path,
        svgplot.PlotSpec(
            x="t",
            y=["var_dsm", "var_ltsm", "var_mix"],
            logx=True,
            logy=True,
            title=f"Regression-target variance vs t ({task})",
            ylabel="variance",
            labels=["DSM", "LTSM", "MIX(w*)"],
        ),
        svg_path,
    )
    return {"csv": csv_path, "svg": svg_path, "profile": profile}


# ---------------------------------------------------------------------------
# weights figure


def weights_figure(
    task: str,
    out_dir,
    n: int = 100_000,
    seed: int = 0,
    n_grid: int = 20,
    checkpoint=None,
    train_steps: int = 8_000,
    train_m: int = 10_000,
    sched: NoiseSchedule | None = None,
    sim_params: dict | None = None,
):
    """Optimal vs learned mixture weight over time.

    Uses the weight schedule from `checkpoint` when given, otherwise trains a
    mix-learned model inline at the configured budget.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = simulators.make_simulator(task, **(sim_params or {}))
    sched = sched or NoiseSchedule()
    grid = np.linspace(T_MIN, 1.0, n_grid)
    w_star = np.array(
        [
            targets.optimal_weight_mc(spec, None, t, n, sched, derive_seed("wstar", task, seed, t))
            for t in grid
        ]
    )
    if checkpoint is not None:
        _, _, ws, _ = nn.load_checkpoint(checkpoint)
        if ws is None:
            raise ValueError(f"{checkpoint} carries no weight schedule (not a mix-learned run?)")
    else:
        data = simulators.generate_dataset(spec, train_m, derive_seed("weights-data", task, seed))
        cfg = training.TrainConfig(objective="mix-learned", steps=train_steps, seed=seed)
        _, ws, _ = training.train(cfg, data, sched)
    w_learned = nn.weight_schedule_eval(ws, grid)
    csv_path = out_dir / f"weights_{task}.csv"
    write_csv(csv_path, ["t", "w_star", "w_learned"], zip(grid, w_star, w_learned))
    svg_path = out_dir / f"weights_{task}.svg"
    svgplot.write_svg_plot(
        csv_path,
        svgplot.PlotSpec(
            x="t",
            y=["w_star", "w_learned"],
            title=f"DSM mixture weight vs t ({task})",
            ylabel="w(t)",
            labels=["optimal w*", "learned w"],
        ),
        svg_path,
    )
    return {"csv": csv_path, "svg": svg_path, "t": grid, "w_star": w_star, "w_learned": w_learned}


# ---------------------------------------------------------------------------
# score-error figure (gaussian only)


def score_error_figure(
    out_dir,
    objectives=("dsm", "ltsm", "mix-learned"),
    seeds=(0, 1, 2, 3, 4),
    steps: int = 20_000,
    batch: int = 256,
    m: int = 10_000,
    observations=None,
    sched: NoiseSchedule | None = None,
):
    """Train each objective at an identical budget per seed (paired data and
    init) and report the mean L1 score error over the observation list."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sched = sched or NoiseSchedule()
    spec = simulators.GaussianSim()
    observations = DEFAULT_OBSERVATIONS[GAUSSIAN] if observations is None else observations
    rows = []
    for seed in seeds:
        data = simulators.generate_dataset(spec, m, derive_seed("score-error-data", seed))
        for objective in objectives:
            cfg = training.TrainConfig(objective=objective, steps=steps, batch_size=batch, seed=seed)
            net, _, _ = training.train(cfg, data, sched)
            err = float(np.mean([metrics.score_l1_error(net, x, sched) for x in observations]))
            rows.append((objective, seed, err))
    csv_path = out_dir / "score_error_gaussian.csv"
    write_csv(csv_path, ["objective", "seed", "l1_error"], rows)
    return {"csv": csv_path, "rows": rows}


# ---------------------------------------------------------------------------
# mmd-vs-budget figure


def _mmd_cell(job: dict):
    """One (budget, objective, seed) training cell; returns result rows.

    Top-level so --jobs can fan cells out across processes.
    """
    spec = simulators.make_simulator(job["task"], **job["sim_params"])
    sched = NoiseSchedule(job["beta_min"], job["beta_max"])
    data = simulators.generate_dataset(spec, job["budget"], job["data_seed"])
    cfg = training.TrainConfig(
        objective=job["objective"], steps=job["steps"], batch_size=min(job["batch"], job["budget"]),
        seed=job["seed"],
    )
    net, _, _ = training.train(cfg, data, sched)
    rows = []
    for x_star, ref, bandwidth, sample_seed in job["evals"]:
        draws = sampler.sample_posterior(net, x_star, MMD_SAMPLE_SIZE, REVERSE_STEPS, sched, sample_seed)
        value = metrics.mmd_u(np.asarray(ref), draws, metrics.MmdConfig(bandwidth))
        rows.append((job["task"], x_star, job["budget"], job["objective"], job["seed"], value))
    return rows


def mmd_budget_figure(
    task: str,
    out_dir,
    budgets=None,
    objectives=("dsm", "mix-learned"),
    seeds=(0, 1, 2),
    observations=None,
    steps: int = 4_000,
    batch: int = 256,
    jobs: int = 1,
    sched: NoiseSchedule | None = None,
    sim_params: dict | None = None,
):
    """MMD (model posterior vs rejection/conjugate reference) across simulator
    budgets. References and bandwidths are computed once per observation and
    shared by every method and budget; sampling seeds are paired across
    objectives."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sim_params = sim_params or {}
    spec = simulators.make_simulator(task, **sim_params)
    sched = sched or NoiseSchedule()
    budgets = DEFAULT_BUDGETS if budgets is None else list(budgets)
    observations = DEFAULT_OBSERVATIONS[task] if observations is None else list(observations)

    refs, bandwidths = {}, {}
    for x_star in observations:
        pilot = simulators.reference_posterior(spec, x_star, PILOT_SIZE, derive_seed("pilot", task, x_star))
        bandwidths[x_star] = metrics.median_heuristic(pilot)
        refs[x_star] = simulators.reference_posterior(
            spec, x_star, MMD_SAMPLE_SIZE, derive_seed("reference", task, x_star)
        )

    jobs_list = []
    for budget in budgets:
        for objective in objectives:
            for seed in seeds:
                evals = [
                    (
                        x_star,
                        refs[x_star],
                        bandwidths[x_star],
                        derive_seed("sample", task, budget, seed, x_star),
                    )
                    for x_star in observations
                ]
                jobs_list.append(
                    {
                        "task": task,
                        "sim_params": sim_params,
                        "beta_min": sched.beta_min,
                        "beta_max": sched.beta_max,
                        "budget": int(budget),
                        "objective": objective,
                        "seed": int(seed),
                        "data_seed": derive_seed("mmd-data", task, budget, seed),
                        "steps": steps,
                        "batch": batch,
                        "evals": evals,
                    }
                )
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            all_rows = list(pool.map(_mmd_cell, jobs_list))
    else:
        all_rows = [_mmd_cell(job) for job in jobs_list]
    rows = [row for cell in all_rows for row in cell]
    csv_path = out_dir / f"mmd_{task}.csv"
    write_csv(csv_path, ["task", "x_star", "budget", "objective", "seed", "mmd"], rows)

    mean_rows = []
    for budget in budgets:
        for objective in objectives:
            vals = [r[5] for r in rows if r[2] == budget and r[3] == objective]
            mean_rows.append((budget, objective, float(np.mean(vals))))
    mean_csv = out_dir / f"mmd_{task}_mean.csv"
    write_csv(
        mean_csv,
        ["budget"] + [f"mmd_{o.replace('-', '_')}" for o in objectives],
        [
            [budget] + [next(r[2] for r in mean_rows if r[0] == budget and r[1] == o) for o in objectives]
            for budget in budgets
        ],
    )
    svg_path = out_dir / f"mmd_{task}.svg"
    svgplot.write_svg_plot(
        mean_csv,
        svgplot.PlotSpec(
            x="budget",
            y=[f"mmd_{o.replace('-', '_')}" for o in objectives],
            logx=True,
            title=f"MMD vs simulator budget ({task})",
            ylabel="MMD",
            labels=list(objectives),
        ),
        svg_path,
    )
    return {"csv": csv_path, "mean_csv": mean_csv, "svg": svg_path, "rows": rows}
