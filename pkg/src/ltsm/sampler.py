"""Posterior sampling by reverse-SDE integration with a learned (or injected)
conditional score."""

from __future__ import annotations

import numpy as np

from . import nn
from .errors import DivergenceError
from .sde import T_MIN, NoiseSchedule, reverse_step
from .serialize import fmt17


def sample_posterior(
    net,
    x,
    n_samples: int,
    n_steps: int,
    sched: NoiseSchedule,
    seed: int,
) -> np.ndarray:
    """n_samples approximate draws from p(theta | x), shape (n_samples, d).

    Integrates the reverse SDE with fixed-step Euler-Maruyama from t=1 down to
    t_min, starting from standard normal noise. `net` is either a trained
    ScoreNetwork or any callable score(theta_t, t) -> same-shape array (tests
    inject the analytic Gaussian score this way).
    """
    if n_steps < 1:
        raise ValueError("need at least one reverse step")
    if callable(net):
        score_fn = net
        d = 1
    else:
        x_enc = net.encoding.encode(x)
        score_fn = lambda th, t: nn.score_net_eval_encoded(net, th, t, x_enc)
        d = net.theta_dim
    rng = np.random.default_rng(seed)
    theta = rng.standard_normal((n_samples, d))
    ts = np.linspace(1.0, T_MIN, n_steps + 1)
    for k in range(n_steps):
        t, dt = ts[k], ts[k] - ts[k + 1]
        score = np.asarray(score_fn(theta, t), dtype=float)
        try:
            theta = reverse_step(theta, t, dt, score, sched, rng)
        except DivergenceError as err:
            raise DivergenceError(f"sampling diverged at step {k + 1}/{n_steps} (t={t:.6g}): {err}") from err
        if not np.all(np.isfinite(theta)):
            raise DivergenceError(f"sampling diverged at step {k + 1}/{n_steps} (t={t:.6g})")
    return theta


def save_samples(path, samples: np.ndarray, x, seed: int, n_steps: int, checkpoint: str) -> None:
    """CSV theta_0,...,theta_{d-1} with a provenance comment line."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    header = [f"theta_{i}" for i in range(samples.shape[1])]
    lines = [f"# x={fmt17(x)} seed={seed} n_steps={n_steps} checkpoint={checkpoint}", ",".join(header)]
    for row in samples:
        lines.append(",".join(fmt17(v) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_samples(path) -> np.ndarray:
    # line 1 is the provenance comment, line 2 the column header
    return np.loadtxt(path, delimiter=",", skiprows=2, ndmin=2)
