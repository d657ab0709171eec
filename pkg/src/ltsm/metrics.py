"""Diagnostics: kernel MMD with median-heuristic bandwidth, regression-target
variance profiles over diffusion time, and the Gaussian-task L1 score error.

MMD uses the Gaussian kernel k(u, v) = exp(-||u - v||^2 / (2 sigma^2)) and the
unbiased three-term U-statistic (self-pairs excluded on the two within-sample
terms); the reported value is sqrt(max(MMD^2_u, 0)). The bandwidth is chosen
once per (task, observation) from a pilot reference sample and held fixed
across methods and budgets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist

from . import nn, simulators, targets
from .errors import UnsupportedTaskError
from .sde import T_MIN, NoiseSchedule
from .serialize import write_csv


@dataclass
class MmdConfig:
    bandwidth: float
    m: int | None = None  # expected reference size, None = take from data
    n: int | None = None

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        for name, size in (("m", self.m), ("n", self.n)):
            if size is not None and size < 2:
                raise ValueError(f"{name} must be >= 2")


def median_heuristic(pilot) -> float:
    """Median pairwise Euclidean distance over a pilot sample; fixed thereafter."""
    pilot = np.atleast_2d(np.asarray(pilot, dtype=float))
    if len(pilot) < 2:
        raise ValueError("median heuristic needs at least two pilot points")
    med = float(np.median(pdist(pilot)))
    if med <= 0:
        raise ValueError("degenerate bandwidth: all pilot points identical (broken reference sampler?)")
    return med


_KERNEL_BLOCK = 2048


def _kernel_sum(a, b, sigma) -> float:
    """Sum of the Gaussian kernel over all (a_i, b_j) pairs, in row blocks so
    large sample sizes never materialize the full kernel matrix."""
    total = 0.0
    for lo in range(0, len(a), _KERNEL_BLOCK):
        sq = cdist(a[lo : lo + _KERNEL_BLOCK], b, "sqeuclidean")
        total += float(np.exp(-sq / (2.0 * sigma**2)).sum())
    return total


def mmd_u(ref, model, cfg: MmdConfig) -> float:
    """Unbiased U-statistic MMD estimate, clamped at zero and square-rooted.

    The self-pair diagonals contribute k(u, u) = 1 each and are subtracted as
    counts; the cross term is accumulated in both argument orders and averaged,
    which makes mmd_u(A, B) == mmd_u(B, A) exactly (not just up to rounding).
    """
    ref = np.atleast_2d(np.asarray(ref, dtype=float))
    model = np.atleast_2d(np.asarray(model, dtype=float))
    m, n = len(ref), len(model)
    if m < 2 or n < 2:
        raise ValueError("MMD U-statistic needs at least two samples on each side")
    if cfg.m is not None and m != cfg.m:
        raise ValueError(f"reference size {m} != configured m={cfg.m}")
    if cfg.n is not None and n != cfg.n:
        raise ValueError(f"model size {n} != configured n={cfg.n}")
    within_ref = (_kernel_sum(ref, ref, cfg.bandwidth) - m) / (m * (m - 1))
    within_model = (_kernel_sum(model, model, cfg.bandwidth) - n) / (n * (n - 1))
    cross = 0.5 * (_kernel_sum(ref, model, cfg.bandwidth) + _kernel_sum(model, ref, cfg.bandwidth))
    mmd2 = within_ref + within_model - 2.0 * cross / (m * n)
    return float(np.sqrt(max(mmd2, 0.0)))


@dataclass
class VarianceProfile:
    """Per-t Monte-Carlo variance (trace of covariance) of the three targets."""

    t_grid: np.ndarray
    var_dsm: np.ndarray
    var_ltsm: np.ndarray
    var_mix: np.ndarray
    se_dsm: np.ndarray
    se_ltsm: np.ndarray
    se_mix: np.ndarray
    w_star: np.ndarray
    n: int

    def to_csv(self, path):
        rows = zip(
            self.t_grid, self.var_dsm, self.var_ltsm, self.var_mix,
            self.se_dsm, self.se_ltsm, self.se_mix,
        )
        write_csv(path, ["t", "var_dsm", "var_ltsm", "var_mix", "se_dsm", "se_ltsm", "se_mix"], rows)


def _var_and_se(values: np.ndarray) -> tuple[float, float]:
    """Trace-of-covariance of (n, d) draws plus its large-sample standard error."""
    centered = values - values.mean(axis=0)
    per_comp_var = np.mean(centered**2, axis=0)
    m4 = np.mean(centered**4, axis=0)
    se2 = np.maximum(m4 - per_comp_var**2, 0.0) / len(values)
    return float(per_comp_var.sum()), float(np.sqrt(se2.sum()))


def variance_profile(
    spec,
    x,
    t_grid,
    n: int,
    sched: NoiseSchedule,
    seed: int,
) -> VarianceProfile:
    """MC variance of y_DSM, y_LTSM and y_MIX(w*) on a time grid.

    Conditional on x when x is not None, else expectations run over the
    simulator prior chain. w* is estimated from the same draws, which makes
    the mixture row the pointwise minimum of the fitted variance quadratic.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) <= 0) or t_grid[0] < T_MIN - 1e-12 or t_grid[-1] > 1.0:
        raise ValueError(f"t grid must be strictly increasing within [{T_MIN}, 1]")
    if n < 10**3:
        raise ValueError("variance profiling needs n >= 1000")
    rng = np.random.default_rng(seed)
    cols = {k: [] for k in ("var_dsm", "var_ltsm", "var_mix", "se_dsm", "se_ltsm", "se_mix", "w_star")}
    for t in t_grid:
        y_d, y_l = targets.target_draws(spec, t, n, sched, rng, x=x, conditional=x is not None)
        w = targets.optimal_weight_from_draws(y_d, y_l)
        y_m = w * y_d + (1.0 - w) * y_l
        for tag, y in (("dsm", y_d), ("ltsm", y_l), ("mix", y_m)):
            var, se = _var_and_se(y)
            cols[f"var_{tag}"].append(var)
            cols[f"se_{tag}"].append(se)
        cols["w_star"].append(w)
    return VarianceProfile(t_grid, *(np.asarray(cols[k]) for k in (
        "var_dsm", "var_ltsm", "var_mix", "se_dsm", "se_ltsm", "se_mix", "w_star")), n=n)


def score_l1_error(
    net,
    x: float,
    sched: NoiseSchedule,
    n_t: int = 64,
    n_theta: int = 64,
    span: float = 4.0,
) -> float:
    """Mean |s(theta_t, t, x) - true score| over a (t, theta_t) product grid.

    Gaussian task only. t is uniform on [t_min, 1]; at each t the theta_t leg
    spans +-span marginal standard deviations around the conditional mean.
    `net` may also be a callable score(theta_t_column, t) for oracle injection.
    """
    if not callable(net) and net.task != simulators.GAUSSIAN:
        raise UnsupportedTaskError(f"L1 score error is defined on the gaussian task, not '{net.task}'")
    t_grid = np.linspace(T_MIN, 1.0, n_t)
    x_enc = None if callable(net) else net.encoding.encode(float(x))
    total = 0.0
    for t in t_grid:
        alpha = sched.alpha(t)
        mean = alpha * x / 3.0
        sd = np.sqrt(1.0 - alpha**2 / 3.0)
        theta_col = np.linspace(mean - span * sd, mean + span * sd, n_theta)[:, None]
        if callable(net):
            s = np.asarray(net(theta_col, t), dtype=float)
        else:
            s = nn.score_net_eval_encoded(net, theta_col, t, x_enc)
        true = simulators.gaussian_true_score(theta_col, t, x, sched)
        total += float(np.abs(s - true).mean())
    return total / n_t
