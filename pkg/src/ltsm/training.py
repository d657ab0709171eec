"""Minibatch losses for the four objectives and the optimization loop.

Every objective shares one randomness layout per step: batch indices, then the
per-example diffusion times t ~ U[t_min, t_max], then the forward noise. Only
the regression target changes, so runs that differ only in the objective see
identical (t, eps) draws and comparisons between objectives are paired.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn, targets
from .errors import DivergenceError
from .sde import T_MIN, NoiseSchedule, forward_sample
from .serialize import write_csv
from .simulators import Dataset, JointDraw, SimulatorSpec, sigmoid

OBJECTIVES = ("dsm", "tsm", "ltsm", "mix-learned", "mix-fixed")

# lambda(t) / eta(t) loss weightings; any positive choice leaves the minimizer
# at the true score, the default keeps the loss un-reweighted.
LOSS_WEIGHTS = {"one": lambda t: np.ones_like(np.asarray(t, dtype=float))}


@dataclass
class TrainConfig:
    objective: str = "dsm"
    steps: int = 20_000
    batch_size: int = 256
    lr: float = 1e-3
    seed: int = 0
    t_min: float = T_MIN
    t_max: float = 1.0
    loss_weight: str = "one"
    fixed_weight: object = None  # scalar w, or [(t, w), ...] table for mix-fixed
    hidden: tuple = (128, 128, 128)
    ckpt_every: int = 0  # 0 disables periodic checkpoints
    out_dir: Path | None = None

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got '{self.objective}'")
        if self.steps < 1:
            raise ValueError("step count must be >= 1")
        if self.loss_weight not in LOSS_WEIGHTS:
            raise ValueError(f"unknown loss weighting '{self.loss_weight}'")
        if not (T_MIN - 1e-12 <= self.t_min < self.t_max <= 1.0):
            raise ValueError(f"t range [{self.t_min}, {self.t_max}] must sit inside [{T_MIN}, 1]")
        if self.objective == "mix-fixed" and self.fixed_weight is None:
            raise ValueError("mix-fixed needs a fixed_weight scalar or (t, w) table")


@dataclass
class TrainLog:
    step: list[int] = field(default_factory=list)
    t_mean: list[float] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    grad_norm: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)

    def append(self, step, t_mean, loss, grad_norm):
        if self.step and step <= self.step[-1]:
            raise ValueError("training steps must be strictly increasing")
        self.step.append(int(step))
        self.t_mean.append(float(t_mean))
        self.loss.append(float(loss))
        self.grad_norm.append(float(grad_norm))

    def to_csv(self, path):
        rows = zip(self.step, self.t_mean, self.loss, self.grad_norm)
        write_csv(path, ["step", "t_mean", "loss", "grad_norm"], rows)


def fixed_weight_at(table, t):
    """Evaluate a mix-fixed weight spec (scalar or (t, w) table) at times t."""
    t = np.asarray(t, dtype=float)
    if np.isscalar(table) or np.ndim(table) == 0:
        w = np.full_like(t, float(table))
    else:
        arr = np.asarray(table, dtype=float).reshape(-1, 2)
        order = np.argsort(arr[:, 0])
        w = np.interp(t, arr[order, 0], arr[order, 1])
    if np.any(w < 0) or np.any(w > 1):
        raise ValueError("fixed mixture weights must lie in [0, 1]")
    return w


def _as_arrays(batch):
    if isinstance(batch, tuple):
        return batch
    draws = list(batch)
    if not draws or not isinstance(draws[0], JointDraw):
        raise ValueError("batch must be (theta, z, x) arrays or a list of JointDraw")
    theta = np.stack([d.theta for d in draws])
    z = np.stack([d.z for d in draws])
    x = np.asarray([d.x for d in draws], dtype=float)
    return theta, z, x


def batch_loss(
    cfg: TrainConfig,
    spec: SimulatorSpec,
    net: nn.ScoreNetwork,
    ws: nn.WeightSchedule | None,
    batch,
    sched: NoiseSchedule,
    rng: np.random.Generator,
    t=None,
    eps=None,
):
    """Monte-Carlo loss over one minibatch with exact parameter gradients.

    Returns (loss, net_grads, ws_grads, t_mean). t and eps are drawn here
    (injectable for tests); ws_grads is None except under mix-learned.
    """
    if (ws is not None) != (cfg.objective == "mix-learned"):
        raise ValueError("a weight schedule must be supplied iff objective is mix-learned")
    theta0, z, x = _as_arrays(batch)
    n, d = theta0.shape
    if t is None:
        t = rng.uniform(cfg.t_min, cfg.t_max, n)
    else:
        t = np.broadcast_to(np.asarray(t, dtype=float), (n,))
    if eps is None:
        eps = rng.standard_normal((n, d))
    theta_t = forward_sample(theta0, t, sched, rng, eps=eps)

    y_d = y_l = ws_cache = None
    if cfg.objective == "dsm":
        y = targets.dsm_target(theta0, theta_t, t, sched).value
    elif cfg.objective == "ltsm":
        y = targets.ltsm_target(spec, theta0, z, x, t, sched).value
    elif cfg.objective == "tsm":
        y = targets.tsm_target(spec, theta0, x, t, sched).value
    else:
        y_d = targets.dsm_target(theta0, theta_t, t, sched).value
        y_l = targets.ltsm_target(spec, theta0, z, x, t, sched).value
        if cfg.objective == "mix-fixed":
            w = fixed_weight_at(cfg.fixed_weight, t)
        else:
            logits, ws_cache = nn.mlp_forward(ws.mlp, nn.time_features(t))
            w = sigmoid(logits[:, 0])
        y = w[:, None] * y_d + (1.0 - w[:, None]) * y_l

    x_enc = net.encoding.encode(x)
    s, cache = nn.mlp_forward(net.mlp, net.net_input(theta_t, t, x_enc))
    r = s - y
    eta = LOSS_WEIGHTS[cfg.loss_weight](t)
    per_draw = eta * np.sum(r * r, axis=1)
    if not np.all(np.isfinite(per_draw)):
        bad = int(np.argmax(~np.isfinite(per_draw)))
        raise DivergenceError(f"non-finite loss contribution from draw {bad} at t={t[bad]:.6g}")
    loss = float(per_draw.mean())

    upstream = (2.0 / n) * eta[:, None] * r
    net_grads, _ = nn.mlp_backward(net.mlp, cache, upstream)

    ws_grads = None
    if cfg.objective == "mix-learned":
        dloss_dw = (2.0 / n) * eta * np.sum(r * (y_l - y_d), axis=1)
        dlogit = dloss_dw * w * (1.0 - w)
        ws_grads, _ = nn.mlp_backward(ws.mlp, ws_cache, dlogit[:, None])
    return loss, net_grads, ws_grads, float(t.mean())


def train(cfg: TrainConfig, data: Dataset, sched: NoiseSchedule):
    """Run the optimization loop; returns (net, ws_or_None, TrainLog).

    Deterministic for a fixed cfg.seed. Checkpoints ckpt_<step>.json are
    written every cfg.ckpt_every steps when out_dir is set; on divergence the
    last written checkpoint is left on disk and the error names it.
    """
    if cfg.batch_size > len(data):
        raise ValueError(f"batch size {cfg.batch_size} exceeds dataset size {len(data)}")
    net_ss, ws_ss, loop_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    net = nn.make_score_network(data.spec, np.random.default_rng(net_ss), hidden=cfg.hidden)
    ws = nn.make_weight_schedule(np.random.default_rng(ws_ss)) if cfg.objective == "mix-learned" else None
    rng = np.random.default_rng(loop_ss)

    net_params = net.mlp.params()
    opt = nn.adam_init(net_params, lr=cfg.lr)
    ws_params = ws.mlp.params() if ws is not None else None
    ws_opt = nn.adam_init(ws_params, lr=cfg.lr) if ws is not None else None

    log = TrainLog()
    out_dir = Path(cfg.out_dir) if cfg.out_dir is not None else None
    last_ckpt = None
    steps_per_epoch = max(len(data) // cfg.batch_size, 1)
    epoch_start = time.perf_counter()
    for step in range(1, cfg.steps + 1):
        idx = rng.integers(0, len(data), cfg.batch_size)
        batch = (data.theta[idx], data.z[idx], data.x[idx])
        try:
            loss, net_grads, ws_grads, t_mean = batch_loss(cfg, data.spec, net, ws, batch, sched, rng)
            grad_norm = np.sqrt(
                sum(float(np.sum(g * g)) for g in net_grads)
                + (sum(float(np.sum(g * g)) for g in ws_grads) if ws_grads else 0.0)
            )
            nn.adam_step(opt, net_params, net_grads)
            if ws is not None:
                nn.adam_step(ws_opt, ws_params, ws_grads)
        except DivergenceError as err:
            kept = f"; last good checkpoint: {last_ckpt}" if last_ckpt else ""
            raise DivergenceError(f"training diverged at step {step}: {err}{kept}") from err
        log.append(step, t_mean, loss, grad_norm)
        if step % steps_per_epoch == 0:
            log.epoch_seconds.append(time.perf_counter() - epoch_start)
            epoch_start = time.perf_counter()
        if out_dir is not None and cfg.ckpt_every and step % cfg.ckpt_every == 0:
            out_dir.mkdir(parents=True, exist_ok=True)
            last_ckpt = out_dir / f"ckpt_{step}.json"
            nn.save_checkpoint(last_ckpt, net, sched, ws, meta={"step": step, "objective": cfg.objective})
    return net, ws, log
