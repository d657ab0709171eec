"""Variance-preserving diffusion machinery.

Forward process: d(theta) = -1/2 beta(t) theta dt + sqrt(beta(t)) dW on t in [0, 1],
with the linear schedule beta(t) = beta_min + (beta_max - beta_min) t. The marginal
given theta_0 is Gaussian,

    theta_t ~ N(alpha(t) theta_0, (1 - alpha(t)^2) I),
    alpha(t) = exp[-1/2 (beta_min t + 1/2 (beta_max - beta_min) t^2)],

so forward sampling is exact. Reverse-time integration uses fixed-step
Euler-Maruyama down to T_MIN (the targets are singular at t = 0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError

# All training-time draws and reverse integration stop here; the regression
# targets blow up as t -> 0.
T_MIN = 1e-3

DEFAULT_REVERSE_STEPS = 500


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear beta schedule for the variance-preserving SDE."""

    beta_min: float = 0.1
    beta_max: float = 20.0

    def __post_init__(self):
        if self.beta_min < 0:
            raise ValueError(f"beta_min must be >= 0, got {self.beta_min}")
        if self.beta_max < self.beta_min:
            raise ValueError(f"beta_max must be >= beta_min, got {self.beta_max} < {self.beta_min}")

    def beta(self, t):
        t = np.asarray(t, dtype=float)
        out = self.beta_min + (self.beta_max - self.beta_min) * t
        return out if out.ndim else float(out)

    def alpha(self, t):
        """Mean-decay factor alpha(t); requires t in [0, 1]."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > 1):
            raise ValueError(f"diffusion time must lie in [0, 1], got {t}")
        ib = self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t
        out = np.exp(-0.5 * ib)
        return out if out.ndim else float(out)


def forward_sample(theta0, t, sched: NoiseSchedule, rng: np.random.Generator, eps=None):
    """Draw theta_t ~ N(alpha(t) theta0, (1 - alpha(t)^2) I) exactly.

    theta0 may be a single vector (d,) or a batch (n, d); t a scalar or a
    per-row array. eps injects the standard-normal noise (tests use eps=0 to
    assert the noiseless path).
    """
    theta0 = np.asarray(theta0, dtype=float)
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr <= 0) or np.any(t_arr > 1):
        raise ValueError(f"forward sampling requires t in (0, 1], got {t}")
    alpha = np.asarray(sched.alpha(t_arr))
    if theta0.ndim == 2 and alpha.ndim == 1:
        alpha = alpha[:, None]
    if eps is None:
        eps = rng.standard_normal(theta0.shape)
    else:
        eps = np.broadcast_to(np.asarray(eps, dtype=float), theta0.shape)
    return alpha * theta0 + np.sqrt(1.0 - alpha**2) * eps


def reverse_step(theta_t, t, dt, score, sched: NoiseSchedule, rng: np.random.Generator, eps=None):
    """One Euler-Maruyama step of the reverse SDE, from time t to t - dt.

    theta_{t-dt} = theta_t - [-1/2 beta(t) theta_t - beta(t) score] dt
                   + sqrt(beta(t) dt) eps
    """
    theta_t = np.asarray(theta_t, dtype=float)
    score = np.asarray(score, dtype=float)
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if t - dt < T_MIN - 1e-12:
        raise ValueError(f"reverse step would cross t_min={T_MIN}: t={t}, dt={dt}")
    if not np.all(np.isfinite(score)):
        bad = np.argwhere(~np.isfinite(score))[0]
        raise DivergenceError(f"non-finite score fed to reverse_step at t={t} (entry {tuple(bad)})")
    beta = sched.beta(t)
    drift = -0.5 * beta * theta_t - beta * score
    if eps is None:
        eps = rng.standard_normal(theta_t.shape)
    else:
        eps = np.broadcast_to(np.asarray(eps, dtype=float), theta_t.shape)
    return theta_t - drift * dt + np.sqrt(beta * dt) * eps
