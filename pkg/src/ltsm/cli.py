"""Command-line entry point.

Subcommands: simulate, train, sample, eval-mmd, diag-variance, diag-weights,
diag-score-error, plot, repro. Options can come from an INI config file
(section per subcommand) via --config; command-line flags win. Exit codes:
0 success, 1 runtime failure (diagnostic on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
from pathlib import Path

import numpy as np

from . import metrics, nn, pipelines, sampler, simulators, svgplot, targets, training
from .sde import NoiseSchedule
from .serialize import fmt17, write_csv
from .simulators import GALTON, GAUSSIAN, MIXTURE

TASKS = (GAUSSIAN, MIXTURE, GALTON)


def _out_root(value=None) -> Path:
    return Path(value or os.environ.get("LTSM_OUT_DIR", "ltsm_out"))


def _comma_floats(text):
    return [float(v) for v in str(text).split(",") if v != ""]


def _comma_ints(text):
    return [int(v) for v in str(text).split(",") if v != ""]


def _comma_strs(text):
    return [v.strip() for v in str(text).split(",") if v.strip()]


def _t_grid(text):
    """'lo:hi:num[:log]' or a comma list of times."""
    text = str(text)
    if ":" in text:
        parts = text.split(":")
        lo, hi, num = float(parts[0]), float(parts[1]), int(parts[2])
        if len(parts) > 3 and parts[3] == "log":
            return np.geomspace(lo, hi, num)
        return np.linspace(lo, hi, num)
    return np.asarray(_comma_floats(text))


def _sim_params(args) -> dict:
    params = {}
    if args.task == MIXTURE and getattr(args, "k", None):
        params["k"] = args.k
    if args.task == GALTON:
        if getattr(args, "rows", None):
            params["rows"] = args.rows
        if getattr(args, "num_nails", None):
            params["num_nails"] = args.num_nails
    return params


def _add_task_options(p, required=True):
    p.add_argument("--task", choices=TASKS, required=required)
    p.add_argument("--k", type=int, help="number of classes (mixture task)")
    p.add_argument("--rows", type=int, help="galton rows")
    p.add_argument("--num-nails", type=int, help="galton bins")


def _schedule(args) -> NoiseSchedule:
    return NoiseSchedule(args.beta_min, args.beta_max)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ltsm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI config file; flags override it")
        p.add_argument("--beta-min", type=float, default=0.1)
        p.add_argument("--beta-max", type=float, default=20.0)
        return p

    p = common(sub.add_parser("simulate", help="generate and store a simulator dataset"))
    _add_task_options(p)
    p.add_argument("--m", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="dataset CSV path")

    p = common(sub.add_parser("train", help="train a score network on a stored dataset"))
    p.add_argument("--data", required=True)
    p.add_argument("--objective", choices=training.OBJECTIVES, default="dsm")
    p.add_argument("--steps", type=int, default=20_000)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fixed-weight", type=float, help="constant w for mix-fixed")
    p.add_argument("--ckpt-every", type=int, default=0)
    p.add_argument("--out", help="output directory")

    p = common(sub.add_parser("sample", help="sample the posterior via the reverse SDE"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--x", type=float, required=True)
    p.add_argument("--n", type=int, default=2_000)
    p.add_argument("--steps", type=int, default=pipelines.REVERSE_STEPS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="samples CSV path")

    p = common(sub.add_parser("eval-mmd", help="MMD between model samples and the reference posterior"))
    _add_task_options(p)
    p.add_argument("--x", type=float, required=True)
    p.add_argument("--model", required=True, help="model samples CSV")
    p.add_argument("--ref", help="reference samples CSV (default: draw them)")
    p.add_argument("--ref-size", type=int, default=pipelines.MMD_SAMPLE_SIZE)
    p.add_argument("--pilot-size", type=int, default=pipelines.PILOT_SIZE)
    p.add_argument("--bandwidth", type=float, help="kernel bandwidth; default median heuristic")
    p.add_argument("--budget", type=int, default=0, help="provenance column for the CSV")
    p.add_argument("--objective", default="unknown", help="provenance column for the CSV")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV to append the result row to")

    p = common(sub.add_parser("diag-variance", help="regression-target variance profile"))
    _add_task_options(p)
    p.add_argument("--x", type=float, help="condition on this observation")
    p.add_argument("--t-grid", type=_t_grid, default=None)
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output directory")

    p = common(sub.add_parser("diag-weights", help="optimal (and learned) mixture weight vs time"))
    _add_task_options(p)
    p.add_argument("--checkpoint", help="mix-learned checkpoint for the learned column")
    p.add_argument("--n-grid", type=int, default=20)
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output CSV path")

    p = common(sub.add_parser("diag-score-error", help="L1 score error of a gaussian checkpoint"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--x", type=float, help="observation; default averages the standard five")
    p.add_argument("--objective", default="", help="provenance column (default: checkpoint metadata)")
    p.add_argument("--seed", type=int, default=-1, help="provenance column")
    p.add_argument("--out", help="CSV to append the result row to")

    p = common(sub.add_parser("plot", help="render a CSV as a standalone SVG"))
    p.add_argument("--csv", required=True)
    p.add_argument("--x", required=True)
    p.add_argument("--y", type=_comma_strs, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=("line", "scatter"), default="line")
    p.add_argument("--logx", action="store_true")
    p.add_argument("--logy", action="store_true")
    p.add_argument("--title", default="")
    p.add_argument("--labels", type=_comma_strs, default=None)

    p = common(sub.add_parser("repro", help="run a full figure pipeline"))
    p.add_argument("--figure", choices=("variance", "score-error", "mmd-budget", "weights"), required=True)
    _add_task_options(p, required=False)
    p.add_argument("--x", type=float)
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--t-grid", type=_t_grid, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=_comma_ints, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--m", type=int, default=10_000)
    p.add_argument("--budgets", type=_comma_ints, default=None)
    p.add_argument("--objectives", type=_comma_strs, default=None)
    p.add_argument("--observations", type=_comma_floats, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="output directory")
    return parser


def _inject_config(argv: list[str]) -> list[str]:
    """Insert [subcommand] entries from --config before the user's flags."""
    if "--config" not in argv:
        return argv
    command = argv[0]
    cfg_path = argv[argv.index("--config") + 1]
    ini = configparser.ConfigParser()
    if not ini.read(cfg_path):
        raise FileNotFoundError(f"config file not found: {cfg_path}")
    injected = []
    if ini.has_section(command):
        for key, value in ini.items(command):
            flag = "--" + key.replace("_", "-")
            if value.lower() in ("true", "false"):
                if value.lower() == "true":
                    injected.append(flag)
            else:
                injected.extend([flag, value])
    return [command] + injected + argv[1:]


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if argv and not argv[0].startswith("-"):
        try:
            argv = _inject_config(argv)
        except (FileNotFoundError, configparser.Error) as err:
            print(f"error: {err}", file=sys.stderr)
            return 1
    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except Exception as err:  # runtime failures -> exit 1 with a diagnostic
        print(f"error: {err}", file=sys.stderr)
        return 1


def _append_csv_row(path, header: list[str], row) -> None:
    path = Path(path)
    new = not path.exists()
    with open(path, "a") as fh:
        if new:
            fh.write(",".join(header) + "\n")
        fh.write(",".join(fmt17(v) for v in row) + "\n")


def _dispatch(args) -> int:
    cmd = args.command
    if cmd == "simulate":
        spec = simulators.make_simulator(args.task, **_sim_params(args))
        data = simulators.generate_dataset(spec, args.m, args.seed)
        out = Path(args.out) if args.out else _out_root() / f"dataset_{args.task}_m{args.m}_seed{args.seed}.csv"
        out.parent.mkdir(parents=True, exist_ok=True)
        simulators.save_dataset(out, data)
        pipelines.record_manifest(
            out.parent, cmd, {"task": args.task, "m": args.m, "seed": args.seed,
                              "params": spec.params()}, [args.seed], [out],
        )
        print(out)
        return 0

    if cmd == "train":
        data = simulators.load_dataset(args.data)
        out_dir = _out_root(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        cfg = training.TrainConfig(
            objective=args.objective, steps=args.steps, batch_size=args.batch, lr=args.lr,
            seed=args.seed, fixed_weight=args.fixed_weight, ckpt_every=args.ckpt_every,
            out_dir=out_dir,
        )
        sched = _schedule(args)
        net, ws, log = training.train(cfg, data, sched)
        ckpt = out_dir / "ckpt_final.json"
        nn.save_checkpoint(ckpt, net, sched, ws, meta={
            "objective": args.objective, "seed": args.seed, "steps": args.steps,
            "dataset": str(args.data), "m": len(data),
        })
        log_path = out_dir / "trainlog.csv"
        log.to_csv(log_path)
        pipelines.record_manifest(
            out_dir, cmd, {"data": str(args.data), "objective": args.objective, "steps": args.steps,
                           "batch": args.batch, "lr": args.lr, "seed": args.seed},
            [args.seed], [ckpt, log_path],
        )
        print(f"final loss {log.loss[-1]:.5g} (step {log.step[-1]}); checkpoint {ckpt}")
        return 0

    if cmd == "sample":
        net, sched, _, _ = nn.load_checkpoint(args.checkpoint)
        draws = sampler.sample_posterior(net, args.x, args.n, args.steps, sched, args.seed)
        out = Path(args.out) if args.out else _out_root() / f"samples_x{args.x:g}_seed{args.seed}.csv"
        out.parent.mkdir(parents=True, exist_ok=True)
        sampler.save_samples(out, draws, args.x, args.seed, args.steps, str(args.checkpoint))
        pipelines.record_manifest(
            out.parent, cmd, {"checkpoint": str(args.checkpoint), "x": args.x, "n": args.n,
                              "steps": args.steps, "seed": args.seed}, [args.seed], [out],
        )
        print(out)
        return 0

    if cmd == "eval-mmd":
        spec = simulators.make_simulator(args.task, **_sim_params(args))
        model = sampler.load_samples(args.model)
        if args.ref:
            ref = sampler.load_samples(args.ref)
        else:
            ref = simulators.reference_posterior(
                spec, args.x, args.ref_size, pipelines.derive_seed("reference", args.task, args.x)
            )
        if args.bandwidth:
            bandwidth = args.bandwidth
        else:
            pilot = simulators.reference_posterior(
                spec, args.x, args.pilot_size, pipelines.derive_seed("pilot", args.task, args.x)
            )
            bandwidth = metrics.median_heuristic(pilot)
        value = metrics.mmd_u(ref, model, metrics.MmdConfig(bandwidth))
        if args.out:
            _append_csv_row(
                args.out, ["task", "x_star", "budget", "objective", "seed", "mmd"],
                (args.task, args.x, args.budget, args.objective, args.seed, value),
            )
        print(fmt17(value))
        return 0

    if cmd == "diag-variance":
        out_dir = _out_root(args.out)
        result = pipelines.variance_figure(
            args.task, out_dir, x=args.x, n=args.n, seed=args.seed, t_grid=args.t_grid,
            sched=_schedule(args), sim_params=_sim_params(args),
        )
        pipelines.record_manifest(
            out_dir, cmd, {"task": args.task, "x": args.x, "n": args.n, "seed": args.seed},
            [args.seed], [result["csv"], result["svg"]],
        )
        print(result["csv"])
        return 0

    if cmd == "diag-weights":
        spec = simulators.make_simulator(args.task, **_sim_params(args))
        sched = _schedule(args)
        grid = np.linspace(training.T_MIN, 1.0, args.n_grid)
        w_star = [
            targets.optimal_weight_mc(spec, None, t, args.n, sched,
                                      pipelines.derive_seed("wstar", args.task, args.seed, t))
            for t in grid
        ]
        header, cols = ["t", "w_star"], [grid, w_star]
        if args.checkpoint:
            _, _, ws, _ = nn.load_checkpoint(args.checkpoint)
            if ws is None:
                raise ValueError(f"{args.checkpoint} carries no weight schedule")
            header.append("w_learned")
            cols.append(nn.weight_schedule_eval(ws, grid))
        out = Path(args.out) if args.out else _out_root() / f"weights_{args.task}.csv"
        out.parent.mkdir(parents=True, exist_ok=True)
        write_csv(out, header, zip(*cols))
        pipelines.record_manifest(
            out.parent, cmd, {"task": args.task, "n": args.n, "seed": args.seed,
                              "checkpoint": args.checkpoint}, [args.seed], [out],
        )
        print(out)
        return 0

    if cmd == "diag-score-error":
        net, sched, _, meta = nn.load_checkpoint(args.checkpoint)
        observations = [args.x] if args.x is not None else pipelines.DEFAULT_OBSERVATIONS[GAUSSIAN]
        err = float(np.mean([metrics.score_l1_error(net, x, sched) for x in observations]))
        objective = args.objective or meta.get("objective", "unknown")
        seed = args.seed if args.seed >= 0 else meta.get("seed", 0)
        if args.out:
            _append_csv_row(args.out, ["objective", "seed", "l1_error"], (objective, seed, err))
        print(fmt17(err))
        return 0

    if cmd == "plot":
        spec = svgplot.PlotSpec(
            x=args.x, y=args.y, kind=args.kind, logx=args.logx, logy=args.logy,
            title=args.title, labels=args.labels or [],
        )
        out = svgplot.write_svg_plot(args.csv, spec, args.out)
        print(out)
        return 0

    if cmd == "repro":
        return _run_repro(args)
    raise ValueError(f"unhandled command {cmd}")


def _run_repro(args) -> int:
    out_dir = _out_root(args.out)
    sched = _schedule(args)
    seeds = args.seeds
    if args.figure == "variance":
        if not args.task:
            raise ValueError("repro --figure variance needs --task")
        result = pipelines.variance_figure(
            args.task, out_dir, x=args.x, n=args.n, seed=args.seed, t_grid=args.t_grid,
            sched=sched, sim_params=_sim_params(args),
        )
        artifacts = [result["csv"], result["svg"]]
        used_seeds = [args.seed]
    elif args.figure == "weights":
        if not args.task:
            raise ValueError("repro --figure weights needs --task")
        result = pipelines.weights_figure(
            args.task, out_dir, n=args.n, seed=args.seed,
            train_steps=args.steps or 8_000, train_m=args.m, sched=sched,
            sim_params=_sim_params(args),
        )
        artifacts = [result["csv"], result["svg"]]
        used_seeds = [args.seed]
    elif args.figure == "score-error":
        result = pipelines.score_error_figure(
            out_dir, objectives=tuple(args.objectives or ("dsm", "ltsm", "mix-learned")),
            seeds=tuple(seeds if seeds is not None else (0, 1, 2, 3, 4)),
            steps=args.steps or 20_000, batch=args.batch, m=args.m,
            observations=args.observations, sched=sched,
        )
        artifacts = [result["csv"]]
        used_seeds = list(seeds if seeds is not None else (0, 1, 2, 3, 4))
    else:  # mmd-budget
        if not args.task:
            raise ValueError("repro --figure mmd-budget needs --task")
        result = pipelines.mmd_budget_figure(
            args.task, out_dir, budgets=args.budgets,
            objectives=tuple(args.objectives or ("dsm", "mix-learned")),
            seeds=tuple(seeds if seeds is not None else (0, 1, 2)),
            observations=args.observations, steps=args.steps or 4_000, batch=args.batch,
            jobs=args.jobs, sched=sched, sim_params=_sim_params(args),
        )
        artifacts = [result["csv"], result["mean_csv"], result["svg"]]
        used_seeds = list(seeds if seeds is not None else (0, 1, 2))
    config = {k: v for k, v in vars(args).items() if k not in ("command", "config") and v is not None}
    config = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in config.items()}
    pipelines.record_manifest(out_dir, f"repro:{args.figure}", config, used_seeds, artifacts)
    for a in artifacts:
        print(a)
    return 0


if __name__ == "__main__":
    sys.exit(main())
