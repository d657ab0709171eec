"""Regression targets for score-network training and the variance-optimal
mixture weight.

All four targets are unbiased estimators of the diffused score: conditioning
on theta_t (and the observation x), their conditional mean is the true score,
so the L2 minimizer of each induced loss is the same function. They differ in
variance:

  y_DSM  = (alpha(t) theta0 - theta_t) / (1 - alpha(t)^2)     blows up as t -> 0
  y_TSM  = (1/alpha(t)) grad_theta0 log p(theta0 | x)          needs clean score
  y_LTSM = (1/alpha(t)) grad_theta0 log p(theta0, z, x)        joint score only
  y_MIX  = w y_DSM + (1 - w) y_LTSM                            any w in [0, 1]

The w minimizing Var(y_MIX) at a fixed t is

  w* = (E||y_L||^2 - E[y_D . y_L]) / (E||y_D||^2 + E||y_L||^2 - 2 E[y_D . y_L]),

estimated here by plain Monte Carlo and clipped to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import simulators
from .sde import T_MIN, NoiseSchedule, forward_sample
from .simulators import SimulatorSpec

DSM = "dsm"
TSM = "tsm"
LTSM = "ltsm"
MIX = "mix"

DEGENERATE_DENOM = 1e-12


@dataclass
class RegressionTarget:
    value: np.ndarray  # (d,) for one draw, (n, d) for a batch
    kind: str
    t: float | np.ndarray

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=float)
        if not np.all(np.isfinite(self.value)):
            raise ValueError(f"non-finite {self.kind} target at t={self.t}")


def _check_t(t):
    if np.any(np.asarray(t) < T_MIN):
        raise ValueError(f"targets are undefined below t_min={T_MIN}, got t={t}")
    if np.any(np.asarray(t) > 1.0):
        raise ValueError(f"diffusion time must be <= 1, got t={t}")


def _per_row(arr, like):
    """Lift a per-row scalar array to a column so it broadcasts over (n, d)."""
    arr = np.asarray(arr)
    return arr[:, None] if arr.ndim == 1 and np.ndim(like) == 2 else arr


def dsm_target(theta0, theta_t, t, sched: NoiseSchedule) -> RegressionTarget:
    """Forward-kernel score (alpha theta0 - theta_t) / (1 - alpha^2)."""
    _check_t(t)
    theta0 = np.asarray(theta0, dtype=float)
    alpha = _per_row(sched.alpha(t), theta0)
    value = (alpha * theta0 - np.asarray(theta_t, dtype=float)) / (1.0 - alpha**2)
    return RegressionTarget(value, DSM, t)


def ltsm_target(spec: SimulatorSpec, theta0, z, x, t, sched: NoiseSchedule) -> RegressionTarget:
    """(1/alpha) times the analytic joint score at the clean draw."""
    _check_t(t)
    score = simulators.joint_score(spec, theta0, z, x)
    value = score / _per_row(sched.alpha(t), score)
    return RegressionTarget(value, LTSM, t)


def tsm_target(spec: SimulatorSpec, theta0, x, t, sched: NoiseSchedule) -> RegressionTarget:
    """(1/alpha) times the clean posterior score; gaussian task only."""
    simulators.gaussian_spec_or_raise(spec, "the TSM target")
    _check_t(t)
    theta0 = np.asarray(theta0, dtype=float)
    clean = simulators.gaussian_clean_posterior_score(theta0, _per_row(np.asarray(x, dtype=float), theta0))
    value = clean / _per_row(sched.alpha(t), clean)
    return RegressionTarget(value, TSM, t)


def mix_target(y_dsm: RegressionTarget, y_ltsm: RegressionTarget, w) -> RegressionTarget:
    """Affine combination w * y_DSM + (1 - w) * y_LTSM; unbiased for any w."""
    if not np.array_equal(np.asarray(y_dsm.t), np.asarray(y_ltsm.t)):
        raise ValueError("mixture components must share the diffusion time")
    if y_dsm.value.shape != y_ltsm.value.shape:
        raise ValueError(
            f"mixture components must share shape, got {y_dsm.value.shape} vs {y_ltsm.value.shape}"
        )
    w = _per_row(np.asarray(w, dtype=float), y_dsm.value)
    return RegressionTarget(w * y_dsm.value + (1.0 - w) * y_ltsm.value, MIX, y_dsm.t)


def target_draws(
    spec: SimulatorSpec,
    t: float,
    n: int,
    sched: NoiseSchedule,
    rng: np.random.Generator,
    x=None,
    conditional: bool = False,
):
    """n Monte-Carlo draws of (y_DSM, y_LTSM) at a fixed t, each (n, d).

    Unconditional mode draws (theta0, z) from the simulator prior chain;
    conditional mode draws them from p(theta0, z | x). theta_t always comes
    from the exact forward kernel.
    """
    if conditional:
        if x is None:
            raise ValueError("conditional target draws need an observation x")
        seed = int(rng.integers(2**63))
        theta0, z = simulators.posterior_joint_draws(spec, x, n, seed)
        x_arr = np.full(n, x, dtype=float)
    else:
        theta0, z, x_arr = spec.sample_batch(n, rng)
    theta_t = forward_sample(theta0, t, sched, rng)
    y_d = dsm_target(theta0, theta_t, t, sched).value
    y_l = ltsm_target(spec, theta0, z, x_arr, t, sched).value
    return y_d, y_l


def optimal_weight_mc(
    spec: SimulatorSpec,
    x,
    t: float,
    n: int,
    sched: NoiseSchedule,
    seed: int,
    conditional: bool = False,
) -> float:
    """Monte-Carlo estimate of the variance-optimal mixture weight w*_t.

    Expectations run over p(theta0, z) p_t(theta_t | theta0) by default
    (x is then ignored), or over p(theta0, z | x) p_t(theta_t | theta0)
    when conditional=True.
    """
    if n < 10**3:
        raise ValueError(f"optimal-weight estimation needs n >= 1000, got {n}")
    rng = np.random.default_rng(seed)
    y_d, y_l = target_draws(spec, t, n, sched, rng, x=x, conditional=conditional)
    return optimal_weight_from_draws(y_d, y_l)


def optimal_weight_from_draws(y_d: np.ndarray, y_l: np.ndarray) -> float:
    """w* from paired target draws; 0.5 when the mixture is degenerate."""
    sq_d = float(np.mean(np.sum(y_d**2, axis=-1)))
    sq_l = float(np.mean(np.sum(y_l**2, axis=-1)))
    cross = float(np.mean(np.sum(y_d * y_l, axis=-1)))
    denom = sq_d + sq_l - 2.0 * cross
    if abs(denom) < DEGENERATE_DENOM:
        return 0.5
    return float(np.clip((sq_l - cross) / denom, 0.0, 1.0))
